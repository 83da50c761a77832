#include <tcmrag/corpus.hpp>
#include <tcmrag/dense.hpp>
#include <tcmrag/segment.hpp>
#include <tcmrag/sparse.hpp>

#include <benchmark/benchmark.h>

#include <filesystem>
#include <memory>
#include <random>

using namespace tcmrag;

namespace {

const std::filesystem::path kData = TCMRAG_BENCH_DATA_DIR;

const Segmenter& segmenter() {
    static const Segmenter seg(Lexicon::load(kData / "lexicon.txt"), HmmModel::load(kData / "hmm_model.json"));
    return seg;
}

const std::vector<ClinicalCase>& corpus() {
    static const auto c = load_corpus(kData / "sample_corpus.jsonl");
    return c;
}

void BM_Cut(benchmark::State& state) {
    const auto& seg = segmenter();
    std::string text;
    for (const auto& c : corpus()) text += c.clinical_info;
    for (auto _ : state) benchmark::DoNotOptimize(seg.cut(text));
    state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_Cut);

void BM_CutNoHmm(benchmark::State& state) {
    const auto& seg = segmenter();
    std::string text;
    for (const auto& c : corpus()) text += c.clinical_info;
    for (auto _ : state) benchmark::DoNotOptimize(cut(text, seg.lexicon(), nullptr));
    state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_CutNoHmm);

void BM_VectorSearch(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    constexpr std::size_t dim = 256;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    auto vec = [&] {
        std::vector<double> v(dim);
        for (auto& x : v) x = g(rng);
        return EmbeddingVector::normalized(std::move(v));
    };
    VectorIndex index;
    for (std::size_t i = 0; i < n; ++i) index.add("c" + std::to_string(i) + "#0", vec());
    const auto q = vec();
    for (auto _ : state) benchmark::DoNotOptimize(index.search(q, 50));
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n));
}
BENCHMARK(BM_VectorSearch)->Arg(1000)->Arg(10000);

void BM_KeywordSearch(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(6);
    auto tokens = [&](std::size_t k) {
        std::set<std::string> s;
        while (s.size() < k) s.insert("w" + std::to_string(rng() % 5000));
        return s;
    };
    KeywordIndex index;
    for (std::size_t i = 0; i < n; ++i) index.add("c" + std::to_string(i) + "#0", tokens(40));
    const auto q = tokens(12);
    for (auto _ : state) benchmark::DoNotOptimize(index.search(q, 50));
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n));
}
BENCHMARK(BM_KeywordSearch)->Arg(1000)->Arg(10000);

}  // namespace
BENCHMARK_MAIN();
