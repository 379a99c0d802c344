// Kernel benchmark: the OpenMP-parallel matmul/softmax kernels against the
// serial reference, plus one end-to-end model step at desk scale. The two
// implementations must agree bitwise; the benchmark verifies that while
// timing them.

#include <chrono>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "miditex/kernels.hpp"
#include "miditex/rng.hpp"
#include "miditex/seqmodel.hpp"
#include "miditex/token_grammar.hpp"
#include "miditex/instruments.hpp"
#include "miditex/synthetic.hpp"
#include "miditex/attributes.hpp"

using namespace miditex;

namespace {

Mat random_mat(Rng& rng, int r, int c) {
    Mat m(r, c);
    for (auto& e : m.v) e = rng.normal();
    return m;
}

template <typename F>
double time_ms(F&& f, int reps) {
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) f();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void bench_matmul(int n) {
    Rng rng(42 + n);
    Mat a = random_mat(rng, n, n);
    Mat b = random_mat(rng, n, n);
    int reps = n >= 512 ? 3 : 10;

    Mat serial_out, parallel_out;
    double ts = time_ms([&] { serial_out = kernels::serial::matmul(a, b); }, reps);
    double tp = time_ms([&] { parallel_out = kernels::matmul(a, b); }, reps);
    bool equal = serial_out == parallel_out;
    std::printf("matmul   %4dx%-4d  serial %8.2f ms  parallel %8.2f ms  speedup %5.2fx  bitwise %s\n",
                n, n, ts, tp, ts / tp, equal ? "equal" : "DIFFER");
}

void bench_softmax(int rows, int cols) {
    Rng rng(7);
    Mat base = random_mat(rng, rows, cols);
    int reps = 20;
    Mat s, p;
    double ts = time_ms(
        [&] {
            s = base;
            kernels::serial::softmax_rows(s, 0);
        },
        reps);
    double tp = time_ms(
        [&] {
            p = base;
            kernels::softmax_rows(p, 0);
        },
        reps);
    std::printf("softmax  %4dx%-4d  serial %8.2f ms  parallel %8.2f ms  speedup %5.2fx  bitwise %s\n",
                rows, cols, ts, tp, ts / tp, s == p ? "equal" : "DIFFER");
}

void bench_model_step() {
    InstrumentRegistry registry = InstrumentRegistry::bundled();
    GrammarConfig grammar = GrammarConfig::from_registry(registry);
    Vocabulary vocab(grammar);

    SynthOptions so;
    so.pieces = 4;
    so.bars = 8;
    auto corpus = synth_corpus(so, registry);
    BinTable bins = fit_bins(corpus);

    std::vector<SeqExample> batch;
    for (const auto& score : corpus) {
        TextureProfile profile = extract_profile(score, &bins);
        batch.push_back(make_example(encode(score, profile, grammar), profile, vocab));
    }

    ModelConfig mc;
    mc.vocab_size = vocab.size();
    Model model(mc, 1);
    double t = time_ms([&] { model.loss(batch, 1, true); }, 3);
    int tokens = 0;
    for (const auto& ex : batch) tokens += static_cast<int>(ex.ids.size());
    std::printf("model    fwd+bwd batch of %zu (%d tokens, d=%d): %8.2f ms/step\n", batch.size(),
                tokens, mc.embed_dim, t);
}

} // namespace

int main(int argc, char** argv) {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled (serial build)\n");
#endif
    bool quick = argc > 1 && std::string(argv[1]) == "--quick";
    bench_matmul(128);
    bench_matmul(256);
    if (!quick) bench_matmul(512);
    bench_softmax(512, 512);
    if (!quick) bench_softmax(1024, 1024);
    bench_model_step();
    return 0;
}
