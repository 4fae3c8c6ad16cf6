#include "vulsatd/annotate.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "vulsatd/error.hpp"

namespace vulsatd {

namespace {

bool word_char(unsigned char c) { return std::isalnum(c) || c == '_'; }

char fold(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

std::string fold_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = fold(c);
    return out;
}

}  // namespace

PatternSet mat_pattern_set() {
    return PatternSet{"mat",
                      {{"todo", PatternKind::Word},
                       {"fixme", PatternKind::Word},
                       {"xxx", PatternKind::Word},
                       {"hack", PatternKind::Word}}};
}

PatternSet load_pattern_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open pattern file: " + path.string());
    PatternSet ps;
    ps.name = path.stem().string();
    std::unordered_map<std::string, std::size_t> seen;  // folded text -> line
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        std::size_t e = line.find_last_not_of(" \t\r");
        std::string_view body(line.data() + b, e - b + 1);
        PatternKind kind;
        if (body.rfind("w:", 0) == 0) kind = PatternKind::Word;
        else if (body.rfind("s:", 0) == 0) kind = PatternKind::Substring;
        else
            throw InputError(path.string() + ":" + std::to_string(lineno) +
                             ": pattern line must start with 'w:' or 's:'");
        std::string text(body.substr(2));
        if (text.empty())
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": empty pattern");
        auto [it, inserted] = seen.emplace(fold_ascii(text), lineno);
        if (!inserted)
            throw InputError(path.string() + ":" + std::to_string(lineno) +
                             ": duplicate pattern (already on line " +
                             std::to_string(it->second) + ")");
        ps.patterns.push_back({std::move(text), kind});
    }
    if (ps.patterns.empty()) throw InputError("pattern file has no patterns: " + path.string());
    return ps;
}

bool annotate_mat(std::string_view comment_text) {
    static constexpr std::string_view kTags[] = {"todo", "fixme", "xxx", "hack"};
    std::size_t i = 0;
    const std::size_t n = comment_text.size();
    while (i < n) {
        if (!word_char(static_cast<unsigned char>(comment_text[i]))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && word_char(static_cast<unsigned char>(comment_text[j]))) ++j;
        const std::size_t len = j - i;
        for (std::string_view tag : kTags) {
            if (tag.size() != len) continue;
            bool eq = true;
            for (std::size_t k = 0; k < len; ++k)
                if (fold(comment_text[i + k]) != tag[k]) {
                    eq = false;
                    break;
                }
            if (eq) return true;
        }
        i = j;
    }
    return false;
}

bool annotate_patterns(std::string_view comment_text, const PatternSet& patterns) {
    if (patterns.patterns.empty())
        throw InputError("pattern set '" + patterns.name + "' is empty");
    const std::string folded = fold_ascii(comment_text);
    for (const Pattern& p : patterns.patterns) {
        const std::string pf = fold_ascii(p.text);
        if (pf.empty()) continue;
        if (p.kind == PatternKind::Substring) {
            if (folded.find(pf) != std::string::npos) return true;
            continue;
        }
        std::size_t pos = 0;
        while ((pos = folded.find(pf, pos)) != std::string::npos) {
            const bool left_ok = pos == 0 || !word_char(static_cast<unsigned char>(folded[pos - 1]));
            const std::size_t after = pos + pf.size();
            const bool right_ok =
                after >= folded.size() || !word_char(static_cast<unsigned char>(folded[after]));
            if (left_ok && right_ok) return true;
            ++pos;
        }
    }
    return false;
}

std::vector<FunctionRecord> label_dataset(std::vector<FunctionRecord> records,
                                          const PatternSet& patterns) {
    for (FunctionRecord& r : records) {
        PreparedInput p = prepare_input(r, InputMode::Out);
        r.satd_label = annotate_patterns(p.comment_text, patterns);
    }
    return records;
}

ContingencyTable build_contingency(const std::vector<FunctionRecord>& records) {
    ContingencyTable t;
    for (const FunctionRecord& r : records) {
        if (!r.satd_label || !r.vuln_label)
            throw InputError("record '" + r.id + "' is missing a satd or vuln label");
        const bool s = *r.satd_label, v = *r.vuln_label;
        if (!s && !v) ++t.n00;
        else if (!s && v) ++t.n01;
        else if (s && !v) ++t.n10;
        else ++t.n11;
    }
    return t;
}

ChiSquareResult chi_square(const ContingencyTable& t) {
    const double obs[2][2] = {{static_cast<double>(t.n00), static_cast<double>(t.n01)},
                              {static_cast<double>(t.n10), static_cast<double>(t.n11)}};
    const double rows[2] = {obs[0][0] + obs[0][1], obs[1][0] + obs[1][1]};
    const double cols[2] = {obs[0][0] + obs[1][0], obs[0][1] + obs[1][1]};
    const double total = rows[0] + rows[1];
    if (total <= 0 || rows[0] <= 0 || rows[1] <= 0 || cols[0] <= 0 || cols[1] <= 0)
        throw InputError("chi-square test undefined: a contingency-table marginal is zero");
    double stat = 0.0;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double expected = rows[i] * cols[j] / total;
            const double d = obs[i][j] - expected;
            stat += d * d / expected;
        }
    }
    // survival function of the chi-squared distribution with 1 dof
    const double p = std::erfc(std::sqrt(stat / 2.0));
    return {stat, 1, p};
}

}  // namespace vulsatd
