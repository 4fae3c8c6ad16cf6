#include "vulsatd/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <unordered_set>

#include "vulsatd/error.hpp"

namespace vulsatd {

namespace {

const char* const kSpecialTokens[] = {"[CLS]", "[SEP]", "[EOS]", "[PAD]", "[UNK]"};

bool ws(unsigned char c) { return std::isspace(c); }
bool word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

std::uint64_t pack(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

struct HeapEntry {
    long long count;
    std::string left, right;
    std::uint64_t key;
};

// max-heap by count, ties by lexicographically greatest (left, right)
struct HeapLess {
    bool operator()(const HeapEntry& a, const HeapEntry& b) const {
        if (a.count != b.count) return a.count < b.count;
        if (a.left != b.left) return a.left < b.left;
        return a.right < b.right;
    }
};

struct TrainWord {
    std::vector<int> syms;
    long long count = 0;
};

void add_word_pairs(const TrainWord& w, int widx,
                    std::unordered_map<std::uint64_t, long long>& counts,
                    std::unordered_map<std::uint64_t, std::unordered_set<int>>& where) {
    for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
        const std::uint64_t k = pack(w.syms[i], w.syms[i + 1]);
        counts[k] += w.count;
        where[k].insert(widx);
    }
}

void remove_word_pairs(const TrainWord& w,
                       std::unordered_map<std::uint64_t, long long>& counts) {
    for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
        const std::uint64_t k = pack(w.syms[i], w.syms[i + 1]);
        auto it = counts.find(k);
        if (it != counts.end() && (it->second -= w.count) <= 0) counts.erase(it);
    }
}

std::vector<int> merge_in_word(const std::vector<int>& syms, int left, int right, int merged) {
    std::vector<int> out;
    out.reserve(syms.size());
    std::size_t i = 0;
    while (i < syms.size()) {
        if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
            out.push_back(merged);
            i += 2;
        } else {
            out.push_back(syms[i]);
            ++i;
        }
    }
    return out;
}

std::string escape_token(std::string_view t) {
    std::string out;
    out.reserve(t.size());
    for (unsigned char c : t) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default:
                if (c < 0x20 || c == 0x7f) {
                    static const char* hex = "0123456789abcdef";
                    out += "\\x";
                    out += hex[c >> 4];
                    out += hex[c & 0xf];
                } else {
                    out += static_cast<char>(c);
                }
        }
    }
    return out;
}

std::string unescape_token(std::string_view t, const std::string& context) {
    std::string out;
    out.reserve(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] != '\\') {
            out += t[i];
            continue;
        }
        if (++i >= t.size()) throw InputError(context + ": dangling escape");
        switch (t[i]) {
            case '\\': out += '\\'; break;
            case 't': out += '\t'; break;
            case 'n': out += '\n'; break;
            case 'r': out += '\r'; break;
            case 'x': {
                if (i + 2 >= t.size()) throw InputError(context + ": bad \\x escape");
                auto hexval = [&](char c) -> int {
                    if (c >= '0' && c <= '9') return c - '0';
                    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
                    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
                    throw InputError(context + ": bad \\x escape");
                };
                out += static_cast<char>((hexval(t[i + 1]) << 4) | hexval(t[i + 2]));
                i += 2;
                break;
            }
            default: throw InputError(context + ": unknown escape");
        }
    }
    return out;
}

void finish_model(TokenizerModel& tok) {
    tok.token_to_id.clear();
    for (int i = 0; i < tok.size(); ++i) {
        auto [it, inserted] = tok.token_to_id.emplace(tok.id_to_token[i], i);
        if (!inserted)
            throw InputError("tokenizer vocabulary is not bijective: duplicate token '" +
                             escape_token(tok.id_to_token[i]) + "'");
    }
    tok.merge_rank.clear();
    for (std::size_t r = 0; r < tok.merges.size(); ++r) tok.merge_rank[tok.merges[r]] = static_cast<int>(r);
}

}  // namespace

std::vector<std::string_view> pre_tokenize(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (ws(c)) {
            out.push_back(text.substr(i, 1));
            ++i;
        } else if (word_byte(c)) {
            std::size_t j = i;
            while (j < text.size() && word_byte(static_cast<unsigned char>(text[j]))) ++j;
            out.push_back(text.substr(i, j - i));
            i = j;
        } else {
            out.push_back(text.substr(i, 1));
            ++i;
        }
    }
    return out;
}

TokenizerModel train_bpe(const std::vector<std::string>& texts, int vocab_size) {
    if (texts.empty()) throw InputError("cannot train a tokenizer on an empty corpus");

    // alphabet: every distinct byte; words: multi-byte pre-tokens
    std::set<char> alphabet;
    std::map<std::string, long long> word_counts;
    for (const std::string& text : texts) {
        for (char c : text) alphabet.insert(c);
        for (std::string_view piece : pre_tokenize(text))
            if (piece.size() >= 2) ++word_counts[std::string(piece)];
    }

    TokenizerModel tok;
    for (const char* s : kSpecialTokens) tok.id_to_token.emplace_back(s);
    std::unordered_map<char, int> byte_id;
    for (char c : alphabet) {
        byte_id[c] = tok.size();
        tok.id_to_token.push_back(std::string(1, c));
    }

    const int base = tok.size();
    if (vocab_size <= base)
        throw InputError("vocab_size " + std::to_string(vocab_size) +
                         " too small: alphabet plus special tokens need " + std::to_string(base) +
                         " ids, so the minimum is " + std::to_string(base + 1));
    const int max_merges = vocab_size - base;

    std::vector<TrainWord> words;
    words.reserve(word_counts.size());
    for (const auto& [text, count] : word_counts) {
        TrainWord w;
        w.count = count;
        for (char c : text) w.syms.push_back(byte_id[c]);
        words.push_back(std::move(w));
    }

    std::unordered_map<std::uint64_t, long long> pair_counts;
    std::unordered_map<std::uint64_t, std::unordered_set<int>> pair_words;
    for (std::size_t wi = 0; wi < words.size(); ++wi)
        add_word_pairs(words[wi], static_cast<int>(wi), pair_counts, pair_words);

    std::priority_queue<HeapEntry, std::vector<HeapEntry>, HeapLess> heap;
    for (const auto& [key, count] : pair_counts) {
        const int l = static_cast<int>(key >> 32), r = static_cast<int>(key & 0xffffffffu);
        heap.push({count, tok.id_to_token[l], tok.id_to_token[r], key});
    }

    int merges_done = 0;
    while (merges_done < max_merges && !heap.empty()) {
        HeapEntry top = heap.top();
        heap.pop();
        auto it = pair_counts.find(top.key);
        const long long live = (it == pair_counts.end()) ? 0 : it->second;
        if (live != top.count) {
            if (live >= 2) heap.push({live, std::move(top.left), std::move(top.right), top.key});
            continue;
        }
        if (live < 2) break;

        const int left = static_cast<int>(top.key >> 32);
        const int right = static_cast<int>(top.key & 0xffffffffu);
        const int merged = tok.size();
        tok.id_to_token.push_back(top.left + top.right);
        tok.merges.emplace_back(top.left, top.right);
        ++merges_done;

        auto touched = pair_words.find(top.key);
        if (touched == pair_words.end()) continue;
        const std::vector<int> word_idxs(touched->second.begin(), touched->second.end());
        pair_words.erase(touched);
        for (int wi : word_idxs) {
            TrainWord& w = words[static_cast<std::size_t>(wi)];
            bool has = false;
            for (std::size_t i = 0; i + 1 < w.syms.size(); ++i)
                if (w.syms[i] == left && w.syms[i + 1] == right) {
                    has = true;
                    break;
                }
            if (!has) continue;  // stale index
            remove_word_pairs(w, pair_counts);
            w.syms = merge_in_word(w.syms, left, right, merged);
            add_word_pairs(w, wi, pair_counts, pair_words);
            for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
                const std::uint64_t k = pack(w.syms[i], w.syms[i + 1]);
                auto cit = pair_counts.find(k);
                if (cit != pair_counts.end() && cit->second >= 2)
                    heap.push({cit->second, tok.id_to_token[w.syms[i]],
                               tok.id_to_token[w.syms[i + 1]], k});
            }
        }
    }

    finish_model(tok);
    return tok;
}

TokenizerModel train_bpe(const std::vector<PreparedInput>& corpus, int vocab_size) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size() * 2);
    for (const PreparedInput& p : corpus) {
        texts.push_back(p.comment_text);
        texts.push_back(p.code_text);
    }
    return train_bpe(texts, vocab_size);
}

std::vector<int> encode(const TokenizerModel& tok, std::string_view text) {
    std::vector<int> out;
    std::unordered_map<std::string, std::vector<int>> cache;
    for (std::string_view piece : pre_tokenize(text)) {
        if (piece.size() == 1) {
            auto it = tok.token_to_id.find(std::string(piece));
            out.push_back(it == tok.token_to_id.end() ? TokenizerModel::kUnk : it->second);
            continue;
        }
        std::string key(piece);
        auto cached = cache.find(key);
        if (cached != cache.end()) {
            out.insert(out.end(), cached->second.begin(), cached->second.end());
            continue;
        }
        std::vector<std::string> syms;
        syms.reserve(piece.size());
        for (char c : piece) syms.emplace_back(1, c);
        // repeatedly apply the earliest-learned merge present in the word
        while (syms.size() >= 2) {
            int best = std::numeric_limits<int>::max();
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = tok.merge_rank.find({syms[i], syms[i + 1]});
                if (it != tok.merge_rank.end() && it->second < best) best = it->second;
            }
            if (best == std::numeric_limits<int>::max()) break;
            const std::string l = tok.merges[static_cast<std::size_t>(best)].first;
            const std::string r = tok.merges[static_cast<std::size_t>(best)].second;
            std::vector<std::string> next;
            next.reserve(syms.size());
            std::size_t i = 0;
            while (i < syms.size()) {
                if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
                    next.push_back(l + r);
                    i += 2;
                } else {
                    next.push_back(std::move(syms[i]));
                    ++i;
                }
            }
            syms = std::move(next);
        }
        std::vector<int> ids;
        ids.reserve(syms.size());
        for (const std::string& s : syms) {
            auto it = tok.token_to_id.find(s);
            ids.push_back(it == tok.token_to_id.end() ? TokenizerModel::kUnk : it->second);
        }
        out.insert(out.end(), ids.begin(), ids.end());
        cache.emplace(std::move(key), std::move(ids));
    }
    return out;
}

std::string decode(const TokenizerModel& tok, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= tok.size())
            throw InputError("unknown token id " + std::to_string(id));
        out += tok.id_to_token[static_cast<std::size_t>(id)];
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> truncate_head_only(std::vector<int> comment_ids,
                                                                 std::vector<int> code_ids,
                                                                 int budget) {
    if (budget < 2) throw InputError("truncation budget must be at least 2");
    std::size_t clen = comment_ids.size(), dlen = code_ids.size();
    const std::size_t b = static_cast<std::size_t>(budget);
    // Cutting code first at equal lengths makes the two sides alternate:
    // after a code cut the comment is strictly longer and is cut next.
    while (clen + dlen > b) {
        if (dlen >= clen) --dlen;
        else --clen;
    }
    comment_ids.resize(clen);
    code_ids.resize(dlen);
    return {std::move(comment_ids), std::move(code_ids)};
}

EncodedPair build_model_input(const TokenizerModel& tok, const PreparedInput& prepared,
                              int budget) {
    EncodedPair out;
    out.id = prepared.id;
    auto [comment_ids, code_ids] =
        truncate_head_only(encode(tok, prepared.comment_text), encode(tok, prepared.code_text),
                           budget);
    out.comment_ids = std::move(comment_ids);
    out.code_ids = std::move(code_ids);
    out.segment_lengths = {static_cast<int>(out.comment_ids.size()),
                           static_cast<int>(out.code_ids.size())};
    out.input_ids.reserve(out.comment_ids.size() + out.code_ids.size() + 3);
    out.input_ids.push_back(TokenizerModel::kCls);
    out.input_ids.insert(out.input_ids.end(), out.comment_ids.begin(), out.comment_ids.end());
    out.input_ids.push_back(TokenizerModel::kSep);
    out.input_ids.insert(out.input_ids.end(), out.code_ids.begin(), out.code_ids.end());
    out.input_ids.push_back(TokenizerModel::kEos);
    return out;
}

void save_tokenizer(const TokenizerModel& tok, const std::filesystem::path& vocab_path,
                    const std::filesystem::path& merges_path) {
    std::ofstream vf(vocab_path, std::ios::trunc);
    if (!vf) throw InputError("cannot write vocabulary file: " + vocab_path.string());
    for (int i = 0; i < tok.size(); ++i)
        vf << escape_token(tok.id_to_token[static_cast<std::size_t>(i)]) << '\t' << i << '\n';
    std::ofstream mf(merges_path, std::ios::trunc);
    if (!mf) throw InputError("cannot write merges file: " + merges_path.string());
    for (const auto& [l, r] : tok.merges) mf << escape_token(l) << '\t' << escape_token(r) << '\n';
}

TokenizerModel load_tokenizer(const std::filesystem::path& vocab_path,
                              const std::filesystem::path& merges_path) {
    std::ifstream vf(vocab_path);
    if (!vf) throw InputError("cannot open vocabulary file: " + vocab_path.string());
    TokenizerModel tok;
    std::string line;
    std::size_t lineno = 0;
    std::map<int, std::string> by_id;
    while (std::getline(vf, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string ctx = vocab_path.string() + ":" + std::to_string(lineno);
        const std::size_t tab = line.rfind('\t');
        if (tab == std::string::npos) throw InputError(ctx + ": expected 'token<TAB>id'");
        int id = 0;
        try {
            id = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw InputError(ctx + ": bad token id");
        }
        if (!by_id.emplace(id, unescape_token(std::string_view(line).substr(0, tab), ctx)).second)
            throw InputError(ctx + ": duplicate token id " + std::to_string(id));
    }
    tok.id_to_token.reserve(by_id.size());
    for (const auto& [id, token] : by_id) {
        if (id != tok.size())
            throw InputError(vocab_path.string() + ": token ids are not contiguous from 0");
        tok.id_to_token.push_back(token);
    }
    if (tok.size() < TokenizerModel::kSpecialCount)
        throw InputError(vocab_path.string() + ": vocabulary lacks the special tokens");
    for (int i = 0; i < TokenizerModel::kSpecialCount; ++i)
        if (tok.id_to_token[static_cast<std::size_t>(i)] != kSpecialTokens[i])
            throw InputError(vocab_path.string() + ": id " + std::to_string(i) + " must be " +
                             kSpecialTokens[i]);

    std::ifstream mf(merges_path);
    if (!mf) throw InputError("cannot open merges file: " + merges_path.string());
    lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string ctx = merges_path.string() + ":" + std::to_string(lineno);
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) throw InputError(ctx + ": expected 'left<TAB>right'");
        tok.merges.emplace_back(unescape_token(std::string_view(line).substr(0, tab), ctx),
                                unescape_token(std::string_view(line).substr(tab + 1), ctx));
    }
    finish_model(tok);
    for (const auto& [l, r] : tok.merges)
        if (!tok.token_to_id.count(l + r))
            throw InputError(merges_path.string() + ": merge output '" + escape_token(l + r) +
                             "' missing from the vocabulary");
    return tok;
}

}  // namespace vulsatd
