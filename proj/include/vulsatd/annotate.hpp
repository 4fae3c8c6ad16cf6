#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vulsatd/corpus.hpp"

namespace vulsatd {

enum class PatternKind {
    Word,       // case-insensitive match delimited by non-word characters
    Substring,  // case-insensitive substring match
};

struct Pattern {
    std::string text;
    PatternKind kind = PatternKind::Word;
};

struct PatternSet {
    std::string name;
    std::vector<Pattern> patterns;
};

/// The four IDE task tags as a pattern set: TODO, FIXME, XXX, HACK.
PatternSet mat_pattern_set();

/// Pattern file: one pattern per line, `w:` prefix for word patterns, `s:`
/// for substrings; `#` starts a comment line. Patterns must be unique after
/// case folding.
PatternSet load_pattern_set(const std::filesystem::path& path);

/// True iff one of TODO/FIXME/XXX/HACK occurs as a whole word
/// (case-insensitive; letters, digits and underscore delimit words).
bool annotate_mat(std::string_view comment_text);

bool annotate_patterns(std::string_view comment_text, const PatternSet& patterns);

/// Sets satd_label on every record from the annotator's verdict over the
/// record's full comment material (leading + internal comments). vuln_label
/// is never touched.
std::vector<FunctionRecord> label_dataset(std::vector<FunctionRecord> records,
                                          const PatternSet& patterns);

/// Rows: non-SATD / SATD. Columns: non-vulnerable / vulnerable.
struct ContingencyTable {
    std::uint64_t n00 = 0;
    std::uint64_t n01 = 0;
    std::uint64_t n10 = 0;
    std::uint64_t n11 = 0;

    std::uint64_t total() const { return n00 + n01 + n10 + n11; }
};

/// Counts label pairs. Every record must carry both labels; throws
/// InputError naming the first unlabeled record otherwise.
ContingencyTable build_contingency(const std::vector<FunctionRecord>& records);

struct ChiSquareResult {
    double statistic = 0.0;
    int dof = 1;
    double p_value = 1.0;
};

/// Pearson chi-square test of independence on a 2x2 table, no continuity
/// correction. Throws InputError when a marginal is zero.
ChiSquareResult chi_square(const ContingencyTable& table);

}  // namespace vulsatd
