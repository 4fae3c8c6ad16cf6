#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "vulsatd/annotate.hpp"
#include "vulsatd/error.hpp"

using namespace vulsatd;
namespace fs = std::filesystem;

namespace {

// brute-force reference matcher: try every start offset for every pattern
bool reference_match(const std::string& text, const PatternSet& ps) {
    auto lower = [](char c) {
        return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    };
    auto wordc = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    };
    for (const Pattern& p : ps.patterns) {
        for (std::size_t start = 0; start + p.text.size() <= text.size(); ++start) {
            bool eq = true;
            for (std::size_t k = 0; k < p.text.size(); ++k)
                if (lower(text[start + k]) != lower(p.text[k])) {
                    eq = false;
                    break;
                }
            if (!eq) continue;
            if (p.kind == PatternKind::Substring) return true;
            const bool lb = start == 0 || !wordc(text[start - 1]);
            const std::size_t after = start + p.text.size();
            const bool rb = after >= text.size() || !wordc(text[after]);
            if (lb && rb) return true;
        }
    }
    return false;
}

std::string random_comment(std::mt19937_64& rng) {
    static const char* words[] = {"todo",  "fixme", "xxx",   "hack", "hacky", "todos",
                                  "fix",   "me",    "later", "this", "xor",   "refactor",
                                  "TODO:", "Fixme", "XXX!",  "ugly", "stub",  "todo_list"};
    std::uniform_int_distribution<std::size_t> pick(0, std::size(words) - 1);
    std::uniform_int_distribution<int> count(0, 8);
    std::uniform_int_distribution<int> sep(0, 2);
    std::string out;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
        out += words[pick(rng)];
        out += (sep(rng) == 0) ? "," : " ";
    }
    return out;
}

FunctionRecord make_record(std::string id, std::string code, std::string leading = "") {
    FunctionRecord r;
    r.id = std::move(id);
    r.code = std::move(code);
    r.leading_comment = std::move(leading);
    return r;
}

}  // namespace

TEST_CASE("mat accepts the four task tags as whole words") {
    CHECK(annotate_mat("FIXME this isn't aligned correctly, though it probably isn't needed"));
    CHECK(annotate_mat("TODO handle case that requested size is wrong"));
    CHECK(annotate_mat("a HACK around the parser"));
    CHECK(annotate_mat("XXX"));
    CHECK(annotate_mat("fixme: lower case with colon"));
    CHECK(annotate_mat("FIXME: this code assumes that sigmask is an even multiple"));
}

TEST_CASE("mat rejects embedded and unrelated words") {
    CHECK_FALSE(annotate_mat("Replace the whole sigmask."));
    CHECK_FALSE(annotate_mat("OR the bit field longword -wise."));
    CHECK_FALSE(annotate_mat("XOR the bitfield longword -wise."));
    CHECK_FALSE(annotate_mat("hacky workaround for parser"));
    CHECK_FALSE(annotate_mat("add to the TODO_LIST"));
    CHECK_FALSE(annotate_mat("fixmeup"));
    CHECK_FALSE(annotate_mat(""));
}

TEST_CASE("mat equals the mat pattern set on arbitrary comments") {
    const PatternSet mat = mat_pattern_set();
    std::mt19937_64 rng(77);
    for (int i = 0; i < 2000; ++i) {
        const std::string text = random_comment(rng);
        CHECK(annotate_mat(text) == annotate_patterns(text, mat));
    }
}

TEST_CASE("annotation is case-mapping invariant") {
    const PatternSet mat = mat_pattern_set();
    std::mt19937_64 rng(78);
    for (int i = 0; i < 500; ++i) {
        std::string text = random_comment(rng);
        const bool before = annotate_patterns(text, mat);
        for (char& c : text)
            if (rng() % 2) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            else c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        CHECK(annotate_patterns(text, mat) == before);
    }
}

TEST_CASE("pattern matching agrees with the brute-force reference") {
    PatternSet ps;
    ps.name = "unit";
    ps.patterns = {{"todo", PatternKind::Word},
                   {"hack", PatternKind::Substring},
                   {"fix me", PatternKind::Substring},
                   {"xxx", PatternKind::Word}};
    std::mt19937_64 rng(79);
    for (int i = 0; i < 2000; ++i) {
        const std::string text = random_comment(rng);
        CHECK(annotate_patterns(text, ps) == reference_match(text, ps));
    }
    CHECK(annotate_patterns("hacky", ps));        // substring
    CHECK_FALSE(annotate_patterns("xxxy", ps));   // word boundary
    CHECK_FALSE(annotate_patterns("", ps));
}

TEST_CASE("pattern files load with kinds and comments") {
    const fs::path path = fs::temp_directory_path() / "vulsatd_patterns.txt";
    {
        std::ofstream f(path, std::ios::trunc);
        f << "# sample patterns\n";
        f << "w:todo\n";
        f << "s:hack\n";
        f << "\n";
        f << "w:fix me\n";
    }
    const PatternSet ps = load_pattern_set(path);
    CHECK(ps.name == "vulsatd_patterns");
    REQUIRE(ps.patterns.size() == 3);
    CHECK(ps.patterns[0].kind == PatternKind::Word);
    CHECK(ps.patterns[1].kind == PatternKind::Substring);
    CHECK(ps.patterns[2].text == "fix me");
    fs::remove(path);
}

TEST_CASE("pattern file errors") {
    const fs::path path = fs::temp_directory_path() / "vulsatd_patterns_bad.txt";
    {
        std::ofstream f(path, std::ios::trunc);
        f << "todo\n";
    }
    CHECK_THROWS_AS((void)load_pattern_set(path), InputError);
    {
        std::ofstream f(path, std::ios::trunc);
        f << "# only comments\n";
    }
    CHECK_THROWS_AS((void)load_pattern_set(path), InputError);
    {
        std::ofstream f(path, std::ios::trunc);
        f << "w:todo\n";
        f << "s:TODO\n";
    }
    CHECK_THROWS_AS((void)load_pattern_set(path), InputError);
    fs::remove(path);
}

TEST_CASE("label_dataset reads leading plus internal comments and keeps vuln") {
    std::vector<FunctionRecord> records;
    records.push_back(make_record("internal_only",
                                  "int f(void) {\n  /* TODO handle case */\n  return 0;\n}"));
    records.back().vuln_label = true;
    records.push_back(make_record("leading_only", "int g(void) { return 0; }", "FIXME wrong"));
    records.push_back(make_record("clean", "int h(void) { return 0; }"));
    records.back().vuln_label = false;

    const auto labeled = label_dataset(records, mat_pattern_set());
    REQUIRE(labeled.size() == 3);
    CHECK(labeled[0].satd_label == true);
    CHECK(labeled[0].vuln_label == true);  // untouched
    CHECK(labeled[1].satd_label == true);
    CHECK(labeled[2].satd_label == false);
    CHECK(labeled[2].vuln_label == false);

    // relabeling is a fixed point
    const auto again = label_dataset(labeled, mat_pattern_set());
    for (std::size_t i = 0; i < again.size(); ++i) {
        CHECK(again[i].satd_label == labeled[i].satd_label);
        CHECK(again[i].vuln_label == labeled[i].vuln_label);
    }
}

TEST_CASE("contingency covers all four label pairs") {
    std::vector<FunctionRecord> records;
    const bool vals[4][2] = {{false, false}, {false, true}, {true, false}, {true, true}};
    for (int i = 0; i < 4; ++i) {
        FunctionRecord r = make_record("r" + std::to_string(i), "int f(){}");
        r.satd_label = vals[i][0];
        r.vuln_label = vals[i][1];
        records.push_back(std::move(r));
    }
    const ContingencyTable t = build_contingency(records);
    CHECK(t.n00 == 1);
    CHECK(t.n01 == 1);
    CHECK(t.n10 == 1);
    CHECK(t.n11 == 1);
    CHECK(t.total() == 4);

    std::vector<FunctionRecord> shuffled = {records[3], records[1], records[0], records[2]};
    const ContingencyTable t2 = build_contingency(shuffled);
    CHECK(t2.n00 == t.n00);
    CHECK(t2.n01 == t.n01);
    CHECK(t2.n10 == t.n10);
    CHECK(t2.n11 == t.n11);
}

TEST_CASE("contingency rejects unlabeled records by id") {
    std::vector<FunctionRecord> records;
    FunctionRecord r = make_record("half_labeled", "int f(){}");
    r.satd_label = true;
    records.push_back(std::move(r));
    try {
        build_contingency(records);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("half_labeled") != std::string::npos);
    }
}

TEST_CASE("chi-square reproduces the large-corpus statistic") {
    const ChiSquareResult r = chi_square({134515, 7791, 1395, 657});
    CHECK(std::abs(r.statistic - 2586.6) <= 0.5);
    CHECK(r.dof == 1);
    CHECK(r.p_value < 1e-10);
}

TEST_CASE("independent table gives a zero statistic and p = 1") {
    const ChiSquareResult r = chi_square({50, 50, 50, 50});
    CHECK(r.statistic == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(1.0));

    // proportional rows mean observed == expected exactly
    const ChiSquareResult r2 = chi_square({30, 90, 10, 30});
    CHECK(r2.statistic == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("chi-square rejects zero marginals") {
    CHECK_THROWS_AS((void)chi_square({0, 0, 5, 5}), InputError);
    CHECK_THROWS_AS((void)chi_square({0, 5, 0, 5}), InputError);
}

TEST_CASE("chi-square matches the closed-form 2x2 identity on random tables") {
    std::mt19937_64 rng(80);
    std::uniform_int_distribution<std::uint64_t> cell(1, 100000);
    for (int i = 0; i < 500; ++i) {
        const ContingencyTable t{cell(rng), cell(rng), cell(rng), cell(rng)};
        const double a = static_cast<double>(t.n00), b = static_cast<double>(t.n01);
        const double c = static_cast<double>(t.n10), d = static_cast<double>(t.n11);
        const double n = a + b + c + d;
        const double expected =
            n * (a * d - b * c) * (a * d - b * c) / ((a + b) * (c + d) * (a + c) * (b + d));
        const double got = chi_square(t).statistic;
        CHECK(std::abs(got - expected) <= 1e-9 * std::max(1.0, std::abs(expected)));
    }
}

TEST_CASE("chi-square is invariant under transpose and row/column swaps") {
    const ContingencyTable t{134515, 7791, 1395, 657};
    const double base = chi_square(t).statistic;
    const ContingencyTable transposed{t.n00, t.n10, t.n01, t.n11};
    const ContingencyTable row_swapped{t.n10, t.n11, t.n00, t.n01};
    const ContingencyTable col_swapped{t.n01, t.n00, t.n11, t.n10};
    CHECK(chi_square(transposed).statistic == doctest::Approx(base).epsilon(1e-12));
    CHECK(chi_square(row_swapped).statistic == doctest::Approx(base).epsilon(1e-12));
    CHECK(chi_square(col_swapped).statistic == doctest::Approx(base).epsilon(1e-12));
}
