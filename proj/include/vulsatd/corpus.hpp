#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vulsatd {

/// Whether internal comments stay in the function body (In) or are pulled out
/// and aggregated with the leading comment (Out).
enum class InputMode { In, Out };

std::string to_string(InputMode mode);
InputMode input_mode_from_string(std::string_view s);

/// One C function with its leading comment and optional ground-truth labels.
struct FunctionRecord {
    std::string id;
    std::string project;
    std::string dataset;
    std::string code;             // full function text, internal comments included
    std::string leading_comment;  // delimiter-stripped text, possibly empty
    std::optional<bool> satd_label;
    std::optional<bool> vuln_label;
};

/// The bimodal (comment, code) pair fed to the tokenizer.
struct PreparedInput {
    std::string id;
    std::string comment_text;
    std::string code_text;
    InputMode mode = InputMode::Out;
};

struct StripResult {
    std::string code;                   // input with comment spans spliced out
    std::vector<std::string> comments;  // normalized interiors, source order
};

enum class DatasetFormat { Jsonl };

/// Reads a line-delimited record file. Each line is an object with fields
/// `id, project, dataset, code, leading_comment, satd, vuln`; the two label
/// fields may be absent or null (unlabeled record). Throws InputError naming
/// the offending line for malformed records and duplicate ids.
std::vector<FunctionRecord> ingest_dataset(const std::filesystem::path& path,
                                           DatasetFormat format = DatasetFormat::Jsonl);

/// Writes records in the same line-delimited format ingest_dataset reads.
void write_dataset(const std::filesystem::path& path, const std::vector<FunctionRecord>& records);

/// Splits top-level function definitions out of a raw C source file. Function
/// boundaries come from a brace-matching lexer that is aware of string/char
/// literals, comments, and preprocessor lines; it is not a C parser. A
/// function's leading_comment is the comment block immediately above its
/// signature, separated from it only by whitespace; blank lines between
/// comments terminate the block. Extracted records carry no labels.
std::vector<FunctionRecord> extract_functions(std::string_view source);

/// Removes every `//...` and `/*...*/` span outside string/char literals and
/// returns the normalized interior texts in source order. Bytes outside
/// comments are untouched. Throws InputError (with the start offset) on an
/// unterminated block comment.
StripResult strip_internal_comments(std::string_view code);

/// Assembles the bimodal input. In: leading comment only, code verbatim.
/// Out: leading + internal comments (newline-joined), comment-free code.
PreparedInput prepare_input(const FunctionRecord& record, InputMode mode);

/// Comment interior normalization used for leading and internal comments:
/// delimiters dropped, per-line `*` gutter stripped, lines trimmed.
std::string normalize_comment_interior(std::string_view raw, bool block_comment);

struct DatasetStats {
    std::size_t total = 0;
    std::size_t satd = 0;
    std::size_t vuln = 0;
    std::size_t satd_labeled = 0;  // records carrying a satd label
    std::size_t vuln_labeled = 0;
};

DatasetStats dataset_stats(const std::vector<FunctionRecord>& records);

}  // namespace vulsatd
