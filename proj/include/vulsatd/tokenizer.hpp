#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vulsatd/corpus.hpp"

namespace vulsatd {

/// Byte-pair encoding model. Ids 0..4 are reserved for the special tokens;
/// the single-byte alphabet follows, then one id per merge in merge order.
struct TokenizerModel {
    static constexpr int kCls = 0;
    static constexpr int kSep = 1;
    static constexpr int kEos = 2;
    static constexpr int kPad = 3;
    static constexpr int kUnk = 4;
    static constexpr int kSpecialCount = 5;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::pair<std::string, std::string>> merges;
    std::map<std::pair<std::string, std::string>, int> merge_rank;

    int size() const { return static_cast<int>(id_to_token.size()); }
};

/// Exact partition of text into pre-tokens: identifier runs, single
/// punctuation bytes, single whitespace bytes. Merges never cross pre-token
/// boundaries, so punctuation and whitespace always stay single symbols.
std::vector<std::string_view> pre_tokenize(std::string_view text);

/// Greedy BPE: repeatedly merge the most frequent adjacent symbol pair until
/// `vocab_size` tokens exist or no pair occurs at least twice. Ties pick the
/// lexicographically greatest (left, right) pair.
TokenizerModel train_bpe(const std::vector<std::string>& texts, int vocab_size);
TokenizerModel train_bpe(const std::vector<PreparedInput>& corpus, int vocab_size);

/// Deterministic encoding; raw bytes missing from the alphabet become UNK.
/// No special tokens are inserted.
std::vector<int> encode(const TokenizerModel& tok, std::string_view text);

/// Inverse of encode: concatenation of token surface strings. Throws
/// InputError on an id outside the vocabulary.
std::string decode(const TokenizerModel& tok, const std::vector<int>& ids);

/// Head-only truncation: drop tail tokens from the strictly longer segment;
/// at equal lengths alternate starting with the code segment. Prefixes are
/// preserved and the total never exceeds `budget`.
std::pair<std::vector<int>, std::vector<int>> truncate_head_only(std::vector<int> comment_ids,
                                                                 std::vector<int> code_ids,
                                                                 int budget);

/// `[CLS] comment [SEP] code [EOS]` with both segments encoded and truncated
/// to the shared content budget.
struct EncodedPair {
    std::string id;
    std::vector<int> comment_ids;
    std::vector<int> code_ids;
    std::vector<int> input_ids;
    std::pair<int, int> segment_lengths{0, 0};
};

EncodedPair build_model_input(const TokenizerModel& tok, const PreparedInput& prepared,
                              int budget);

/// Two plain-text files: vocabulary as `token TAB id` per line, merges as
/// `left TAB right` per line in merge order. Control bytes in tokens are
/// escaped (\t, \n, \r, \\, \xHH).
void save_tokenizer(const TokenizerModel& tok, const std::filesystem::path& vocab_path,
                    const std::filesystem::path& merges_path);
TokenizerModel load_tokenizer(const std::filesystem::path& vocab_path,
                              const std::filesystem::path& merges_path);

}  // namespace vulsatd
