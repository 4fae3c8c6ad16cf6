#include "vulsatd/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "vulsatd/error.hpp"

namespace vulsatd {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class ScanState { Code, LineComment, BlockComment, String, CharLit };

struct RawComment {
    std::size_t begin = 0;  // offset of the opening delimiter
    std::size_t end = 0;    // one past the closing delimiter; line comments exclude the newline
    bool block = false;
};

struct Scan {
    std::vector<RawComment> comments;
    std::vector<bool> in_comment;  // per byte, delimiters included
    std::vector<bool> in_literal;  // per byte, quotes included
};

Scan scan_source(std::string_view src) {
    Scan out;
    out.in_comment.assign(src.size(), false);
    out.in_literal.assign(src.size(), false);
    ScanState st = ScanState::Code;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const char c = src[i];
        switch (st) {
            case ScanState::Code:
                if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
                    st = ScanState::LineComment;
                    begin = i;
                    out.in_comment[i] = out.in_comment[i + 1] = true;
                    ++i;
                } else if (c == '/' && i + 1 < src.size() && src[i + 1] == '*') {
                    st = ScanState::BlockComment;
                    begin = i;
                    out.in_comment[i] = out.in_comment[i + 1] = true;
                    ++i;
                } else if (c == '"') {
                    st = ScanState::String;
                    out.in_literal[i] = true;
                } else if (c == '\'') {
                    st = ScanState::CharLit;
                    out.in_literal[i] = true;
                }
                break;
            case ScanState::LineComment:
                if (c == '\n') {
                    out.comments.push_back({begin, i, false});
                    st = ScanState::Code;
                } else {
                    out.in_comment[i] = true;
                }
                break;
            case ScanState::BlockComment:
                out.in_comment[i] = true;
                if (c == '*' && i + 1 < src.size() && src[i + 1] == '/') {
                    out.in_comment[i + 1] = true;
                    out.comments.push_back({begin, i + 2, true});
                    ++i;
                    st = ScanState::Code;
                }
                break;
            case ScanState::String:
                out.in_literal[i] = true;
                if (c == '\\' && i + 1 < src.size()) {
                    out.in_literal[i + 1] = true;
                    ++i;
                } else if (c == '"') {
                    st = ScanState::Code;
                }
                break;
            case ScanState::CharLit:
                out.in_literal[i] = true;
                if (c == '\\' && i + 1 < src.size()) {
                    out.in_literal[i + 1] = true;
                    ++i;
                } else if (c == '\'') {
                    st = ScanState::Code;
                }
                break;
        }
    }
    if (st == ScanState::LineComment) out.comments.push_back({begin, src.size(), false});
    if (st == ScanState::BlockComment)
        throw InputError("unterminated block comment starting at byte " + std::to_string(begin));
    return out;
}

std::string_view raw_interior(std::string_view src, const RawComment& c) {
    if (c.block) return src.substr(c.begin + 2, c.end - c.begin - 4);
    return src.substr(c.begin + 2, c.end - c.begin - 2);
}

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Preprocessor line detection: a line whose first non-whitespace,
// non-comment byte is '#', extended over backslash continuations.
std::vector<bool> mark_preprocessor(std::string_view src, const std::vector<bool>& in_comment) {
    std::vector<bool> prep(src.size(), false);
    std::size_t i = 0;
    while (i < src.size()) {
        std::size_t line_end = src.find('\n', i);
        if (line_end == std::string_view::npos) line_end = src.size();
        std::size_t j = i;
        while (j < line_end &&
               (in_comment[j] || std::isspace(static_cast<unsigned char>(src[j]))))
            ++j;
        if (j < line_end && src[j] == '#') {
            // consume the logical line, following continuations
            std::size_t e = line_end;
            while (e < src.size()) {
                std::size_t k = e;  // e is at '\n'
                while (k > j && std::isspace(static_cast<unsigned char>(src[k - 1])) &&
                       src[k - 1] != '\n')
                    --k;
                if (k > j && src[k - 1] == '\\' && !in_comment[k - 1]) {
                    std::size_t next_end = src.find('\n', e + 1);
                    e = (next_end == std::string_view::npos) ? src.size() : next_end;
                } else {
                    break;
                }
            }
            for (std::size_t p = j; p < e && p < src.size(); ++p) prep[p] = true;
            i = (e < src.size()) ? e + 1 : src.size();
        } else {
            i = (line_end < src.size()) ? line_end + 1 : src.size();
        }
    }
    return prep;
}

struct Token {
    bool ident = false;  // identifier/number run; otherwise single punctuation byte
    char punct = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

bool ident_char(unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '$' || c >= 0x80;
}

std::vector<Token> collect_tokens(std::string_view src, const Scan& scan,
                                  const std::vector<bool>& prep) {
    std::vector<Token> toks;
    std::size_t i = 0;
    while (i < src.size()) {
        if (scan.in_comment[i] || scan.in_literal[i] || prep[i] ||
            std::isspace(static_cast<unsigned char>(src[i]))) {
            ++i;
            continue;
        }
        if (ident_char(static_cast<unsigned char>(src[i]))) {
            std::size_t j = i;
            while (j < src.size() && !scan.in_comment[j] && !scan.in_literal[j] && !prep[j] &&
                   ident_char(static_cast<unsigned char>(src[j])))
                ++j;
            toks.push_back({true, 0, i, j});
            i = j;
        } else {
            toks.push_back({false, src[i], i, i + 1});
            ++i;
        }
    }
    return toks;
}

std::size_t line_of(std::string_view src, std::size_t offset) {
    return 1 + static_cast<std::size_t>(std::count(src.begin(), src.begin() + offset, '\n'));
}

// Leading comment block for a declaration starting at decl_start: nearest
// comment above separated only by whitespace, extended upward while the gap
// between comments is whitespace with at most one newline (no blank line).
std::string leading_comment_for(std::string_view src, const std::vector<RawComment>& comments,
                                std::size_t decl_start) {
    std::ptrdiff_t last = -1;
    for (std::size_t ci = 0; ci < comments.size(); ++ci)
        if (comments[ci].end <= decl_start) last = static_cast<std::ptrdiff_t>(ci);
    if (last < 0) return {};
    const RawComment& nearest = comments[static_cast<std::size_t>(last)];
    if (!is_blank(src.substr(nearest.end, decl_start - nearest.end))) return {};
    std::size_t first = static_cast<std::size_t>(last);
    while (first > 0) {
        const RawComment& prev = comments[first - 1];
        std::string_view gap = src.substr(prev.end, comments[first].begin - prev.end);
        if (!is_blank(gap) || std::count(gap.begin(), gap.end(), '\n') > 1) break;
        --first;
    }
    std::string joined;
    for (std::size_t ci = first; ci <= static_cast<std::size_t>(last); ++ci) {
        std::string part = normalize_comment_interior(raw_interior(src, comments[ci]),
                                                      comments[ci].block);
        if (part.empty()) continue;
        if (!joined.empty()) joined += '\n';
        joined += part;
    }
    return joined;
}

std::optional<bool> read_label(const json& j, const char* field, std::size_t lineno) {
    if (!j.contains(field) || j.at(field).is_null()) return std::nullopt;
    if (!j.at(field).is_boolean())
        throw InputError("line " + std::to_string(lineno) + ": field '" + field +
                         "' must be a boolean");
    return j.at(field).get<bool>();
}

std::string read_string(const json& j, const char* field, std::size_t lineno) {
    if (!j.contains(field))
        throw InputError("line " + std::to_string(lineno) + ": missing field '" + field + "'");
    if (!j.at(field).is_string())
        throw InputError("line " + std::to_string(lineno) + ": field '" + field +
                         "' must be a string");
    return j.at(field).get<std::string>();
}

}  // namespace

std::string to_string(InputMode mode) { return mode == InputMode::In ? "in" : "out"; }

InputMode input_mode_from_string(std::string_view s) {
    if (s == "in") return InputMode::In;
    if (s == "out") return InputMode::Out;
    throw InputError("unknown input mode '" + std::string(s) + "' (expected 'in' or 'out')");
}

std::string normalize_comment_interior(std::string_view raw, bool block_comment) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= raw.size()) {
        std::size_t nl = raw.find('\n', pos);
        if (nl == std::string_view::npos) {
            lines.push_back(raw.substr(pos));
            break;
        }
        lines.push_back(raw.substr(pos, nl - pos));
        pos = nl + 1;
    }
    std::string out;
    std::vector<std::string_view> cleaned;
    for (std::string_view line : lines) {
        std::string_view t = trim(line);
        const char gutter = block_comment ? '*' : '/';
        std::size_t g = 0;
        while (g < t.size() && t[g] == gutter) ++g;
        cleaned.push_back(trim(t.substr(g)));
    }
    // drop blank lines at either end of the block
    std::size_t b = 0, e = cleaned.size();
    while (b < e && cleaned[b].empty()) ++b;
    while (e > b && cleaned[e - 1].empty()) --e;
    for (std::size_t i = b; i < e; ++i) {
        if (i > b) out += '\n';
        out += cleaned[i];
    }
    return out;
}

StripResult strip_internal_comments(std::string_view code) {
    Scan scan = scan_source(code);
    StripResult out;
    out.code.reserve(code.size());
    std::size_t pos = 0;
    for (const RawComment& c : scan.comments) {
        out.code.append(code.substr(pos, c.begin - pos));
        out.comments.push_back(normalize_comment_interior(raw_interior(code, c), c.block));
        pos = c.end;
    }
    out.code.append(code.substr(pos));
    return out;
}

PreparedInput prepare_input(const FunctionRecord& record, InputMode mode) {
    PreparedInput out;
    out.id = record.id;
    out.mode = mode;
    if (mode == InputMode::In) {
        out.comment_text = record.leading_comment;
        out.code_text = record.code;
        return out;
    }
    StripResult stripped = strip_internal_comments(record.code);
    std::string comment = record.leading_comment;
    for (const std::string& c : stripped.comments) {
        if (c.empty()) continue;
        if (!comment.empty()) comment += '\n';
        comment += c;
    }
    out.comment_text = std::move(comment);
    out.code_text = std::move(stripped.code);
    return out;
}

std::vector<FunctionRecord> extract_functions(std::string_view source) {
    Scan scan = scan_source(source);
    std::vector<bool> prep = mark_preprocessor(source, scan.in_comment);
    std::vector<Token> toks = collect_tokens(source, scan, prep);

    std::vector<FunctionRecord> out;
    std::vector<std::size_t> open_braces;  // offsets of unmatched '{'
    std::size_t ti = 0;
    while (ti < toks.size()) {
        const Token& t = toks[ti];
        if (t.punct == '}') {
            if (open_braces.empty())
                throw InputError("unbalanced '}' at byte " + std::to_string(t.begin));
            open_braces.pop_back();
            ++ti;
            continue;
        }
        if (t.punct != '{') {
            ++ti;
            continue;
        }
        const bool function_open =
            open_braces.empty() && ti > 0 && toks[ti - 1].punct == ')';
        if (!function_open) {
            open_braces.push_back(t.begin);
            ++ti;
            continue;
        }
        // match the parameter list's '('
        std::size_t open_paren = 0;
        bool found = false;
        int pd = 0;
        for (std::size_t j = ti; j-- > 0;) {
            if (toks[j].punct == ')') ++pd;
            else if (toks[j].punct == '(' && --pd == 0) {
                open_paren = j;
                found = true;
                break;
            }
        }
        if (!found) {
            open_braces.push_back(t.begin);
            ++ti;
            continue;
        }
        // declaration start: walk back until a statement boundary or a
        // preprocessor line interrupts the token run
        std::size_t k = open_paren;
        while (k > 0) {
            const Token& prev = toks[k - 1];
            if (prev.punct == ';' || prev.punct == '}' || prev.punct == '{') break;
            bool gap_prep = false;
            for (std::size_t p = prev.end; p < toks[k].begin; ++p)
                if (prep[p]) { gap_prep = true; break; }
            if (gap_prep) break;
            --k;
        }
        const std::size_t decl_start = toks[k].begin;
        // body: find the matching '}'
        int depth = 1;
        std::size_t close = ti;
        bool closed = false;
        for (std::size_t j = ti + 1; j < toks.size(); ++j) {
            if (toks[j].punct == '{') ++depth;
            else if (toks[j].punct == '}' && --depth == 0) {
                close = j;
                closed = true;
                break;
            }
        }
        if (!closed)
            throw InputError("unbalanced '{' at byte " + std::to_string(t.begin));

        FunctionRecord rec;
        std::string name = "fn";
        if (open_paren > 0 && toks[open_paren - 1].ident)
            name = std::string(
                source.substr(toks[open_paren - 1].begin,
                              toks[open_paren - 1].end - toks[open_paren - 1].begin));
        rec.id = name + "@" + std::to_string(line_of(source, decl_start));
        rec.code = std::string(source.substr(decl_start, toks[close].end - decl_start));
        rec.leading_comment = leading_comment_for(source, scan.comments, decl_start);
        out.push_back(std::move(rec));
        ti = close + 1;
    }
    if (!open_braces.empty())
        throw InputError("unbalanced '{' at byte " + std::to_string(open_braces.front()));
    return out;
}

std::vector<FunctionRecord> ingest_dataset(const std::filesystem::path& path, DatasetFormat) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open dataset file: " + path.string());
    std::vector<FunctionRecord> out;
    std::unordered_map<std::string, std::size_t> seen;  // id -> line number
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (is_blank(line)) continue;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded() || !j.is_object())
            throw InputError("line " + std::to_string(lineno) + ": malformed record");
        FunctionRecord rec;
        rec.id = read_string(j, "id", lineno);
        rec.project = read_string(j, "project", lineno);
        rec.dataset = read_string(j, "dataset", lineno);
        rec.code = read_string(j, "code", lineno);
        rec.leading_comment = read_string(j, "leading_comment", lineno);
        rec.satd_label = read_label(j, "satd", lineno);
        rec.vuln_label = read_label(j, "vuln", lineno);
        if (rec.code.empty() || rec.code.find('{') == std::string::npos ||
            rec.code.find('}') == std::string::npos)
            throw InputError("line " + std::to_string(lineno) + ": record '" + rec.id +
                             "': code must contain a function body");
        auto [it, inserted] = seen.emplace(rec.id, lineno);
        if (!inserted)
            throw InputError("duplicate id '" + rec.id + "' at lines " +
                             std::to_string(it->second) + " and " + std::to_string(lineno));
        out.push_back(std::move(rec));
    }
    return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<FunctionRecord>& records) {
    std::ofstream outf(path, std::ios::trunc);
    if (!outf) throw InputError("cannot write dataset file: " + path.string());
    for (const FunctionRecord& r : records) {
        ordered_json j;
        j["id"] = r.id;
        j["project"] = r.project;
        j["dataset"] = r.dataset;
        j["code"] = r.code;
        j["leading_comment"] = r.leading_comment;
        if (r.satd_label) j["satd"] = *r.satd_label;
        if (r.vuln_label) j["vuln"] = *r.vuln_label;
        outf << j.dump() << '\n';
    }
    if (!outf) throw InputError("failed writing dataset file: " + path.string());
}

DatasetStats dataset_stats(const std::vector<FunctionRecord>& records) {
    DatasetStats s;
    s.total = records.size();
    for (const FunctionRecord& r : records) {
        if (r.satd_label) {
            ++s.satd_labeled;
            if (*r.satd_label) ++s.satd;
        }
        if (r.vuln_label) {
            ++s.vuln_labeled;
            if (*r.vuln_label) ++s.vuln;
        }
    }
    return s;
}

}  // namespace vulsatd
