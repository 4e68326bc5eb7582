#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "forestchat/caption_engine.hpp"
#include "forestchat/eval_metrics.hpp"
#include "forestchat/mask_analytics.hpp"
#include "forestchat/perception.hpp"
#include "forestchat/synthetic.hpp"

using namespace forestchat;

namespace {

ChangeMask noisy_mask(int side, double density) {
  std::mt19937 rng(3);
  std::bernoulli_distribution on(density);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(side) * side);
  for (auto& v : labels) v = on(rng) ? 1 : 0;
  return ChangeMask(side, side, std::move(labels), MaskProvenance::Predicted, ClassDomain::Binary);
}

void BM_LabelComponents(benchmark::State& state) {
  const auto mask = noisy_mask(static_cast<int>(state.range(0)), 0.45);
  for (auto _ : state) benchmark::DoNotOptimize(label_components(mask));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(mask.pixel_count()));
}
BENCHMARK(BM_LabelComponents)->Arg(256)->Arg(1024);

void BM_DetectStatsCaption(benchmark::State& state) {
  SyntheticSpec spec;
  spec.clearings = {{40, 40, 82, 82}, {180, 150, 40, 60}};
  spec.noise_sigma = 5.0;
  const auto syn = make_synthetic_forest_pair(spec);
  for (auto _ : state) {
    const auto det = detect_changes(syn.pair);
    benchmark::DoNotOptimize(generate_rule_captions(compute_stats(det.mask), "bench"));
  }
}
BENCHMARK(BM_DetectStatsCaption)->Unit(benchmark::kMillisecond);

void BM_Otsu(benchmark::State& state) {
  std::mt19937 rng(9);
  std::normal_distribution<double> a(-0.2, 0.05), b(0.3, 0.1);
  ScalarField f;
  f.width = 256;
  f.height = 256;
  for (int i = 0; i < f.width * f.height; ++i) f.values.push_back(i % 5 == 0 ? b(rng) : a(rng));
  for (auto _ : state) benchmark::DoNotOptimize(otsu_split(f));
}
BENCHMARK(BM_Otsu);

void BM_CaptionMetrics(benchmark::State& state) {
  const std::vector<std::string> vocab = {"the", "forest", "loss", "in", "north", "small",
                                          "clearing", "area", "of", "trees", "large", "patch"};
  std::mt19937 rng(1);
  std::uniform_int_distribution<std::size_t> word(0, vocab.size() - 1);
  auto sentence = [&] {
    Tokens t;
    for (int i = 0; i < 12; ++i) t.push_back(vocab[word(rng)]);
    return t;
  };
  std::vector<Tokens> cands;
  std::vector<ReferenceGroup> refs;
  for (int i = 0; i < state.range(0); ++i) {
    cands.push_back(sentence());
    refs.push_back({sentence(), sentence(), sentence(), sentence(), sentence()});
  }
  for (auto _ : state) benchmark::DoNotOptimize(score_captions(cands, refs));
}
BENCHMARK(BM_CaptionMetrics)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
