#pragma once

// Shared helpers for model/experiment tests: a synthetic corpus whose labels
// are decidable from single tokens (SATD iff the comment mentions FIXME,
// vulnerable iff the code calls memcpy), plus encoding into model inputs.

#include <string>
#include <vector>

#include "vulsatd/corpus.hpp"
#include "vulsatd/model.hpp"
#include "vulsatd/rng.hpp"
#include "vulsatd/tokenizer.hpp"

namespace vulsatd::testsupport {

inline std::vector<FunctionRecord> separable_corpus(int n = 64, std::uint64_t seed = 7) {
    static const char* fillers[] = {"buffer", "cursor", "stream", "header",
                                    "packet", "offset", "length", "widget"};
    Rng rng(seed);
    std::vector<FunctionRecord> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const bool satd = (i % 4 == 1) || (i % 4 == 3);
        const bool vuln = (i % 4 == 2) || (i % 4 == 3);
        const std::string a = fillers[rng.below(8)];
        const std::string b = fillers[rng.below(8)];
        FunctionRecord r;
        r.id = "syn" + std::to_string(i);
        r.project = "synthetic";
        r.dataset = "synthetic";
        r.leading_comment = (satd ? std::string("FIXME ") : std::string("note ")) + a + " " + b;
        r.code = "void f" + std::to_string(i) + "(void) {\n    " +
                 (vuln ? "memcpy(dst, src, n);" : "dst[i] = src[i];") + "\n    use(" + a +
                 ");\n}";
        r.satd_label = satd;
        r.vuln_label = vuln;
        out.push_back(std::move(r));
    }
    return out;
}

struct EncodedCorpus {
    TokenizerModel tok;
    std::vector<LabeledExample> examples;
};

inline EncodedCorpus encode_corpus(const std::vector<FunctionRecord>& records, int vocab_size,
                                   int budget, InputMode mode = InputMode::Out) {
    std::vector<PreparedInput> prepared;
    prepared.reserve(records.size());
    for (const FunctionRecord& r : records) prepared.push_back(prepare_input(r, mode));
    EncodedCorpus out{train_bpe(prepared, vocab_size), {}};
    out.examples.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        LabeledExample ex;
        ex.input = build_model_input(out.tok, prepared[i], budget);
        ex.labels = {records[i].satd_label, records[i].vuln_label};
        out.examples.push_back(std::move(ex));
    }
    return out;
}

}  // namespace vulsatd::testsupport
