#include "forestchat/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "forestchat/error.hpp"
#include "parallel.hpp"

namespace forestchat {

namespace {

constexpr int kMaxOrder = 4;

using NgramCounts = std::map<std::string, int>;

NgramCounts ngrams(const Tokens& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < static_cast<std::size_t>(n); ++k) {
      key.push_back('\x1f');
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

void check_corpus(const std::vector<Tokens>& candidates,
                  const std::vector<ReferenceGroup>& references, std::string_view metric) {
  if (candidates.empty()) {
    throw Error(ErrorKind::EmptyCorpus, fmt::format("{}: empty corpus", metric));
  }
  if (candidates.size() != references.size()) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("{}: {} candidates but {} reference groups", metric,
                            candidates.size(), references.size()));
  }
  for (const auto& group : references) {
    if (group.empty()) {
      throw Error(ErrorKind::InvalidArgument, fmt::format("{}: empty reference group", metric));
    }
  }
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Exhaustive search over maximal alignments for the fewest chunks,
// equivalently the most adjacent aligned pairs. Memoised on
// (candidate position, previous alignment, used reference positions).
class ChunkMinimizer {
 public:
  ChunkMinimizer(const Tokens& candidate, const Tokens& reference)
      : cand_(candidate), ref_(reference) {
    std::map<std::string, int> cand_count;
    std::map<std::string, int> ref_count;
    for (const auto& t : cand_) ++cand_count[t];
    for (const auto& t : ref_) ++ref_count[t];
    for (const auto& [word, count] : cand_count) {
      const auto it = ref_count.find(word);
      if (it != ref_count.end()) need_[word] = std::min(count, it->second);
    }
    for (const auto& [word, n] : need_) matches_ += n;
    // Occurrences of each word at or after each candidate position.
    remaining_.assign(cand_.size() + 1, {});
    for (std::size_t i = cand_.size(); i-- > 0;) {
      remaining_[i] = remaining_[i + 1];
      ++remaining_[i][cand_[i]];
    }
  }

  int matches() const { return matches_; }

  // Returns -1 when the state budget is exhausted.
  int max_adjacencies() {
    if (matches_ == 0) return 0;
    if (ref_.size() > 64) return -1;
    const int best = search(0, -1, 0);
    return exhausted_ ? -1 : best;
  }

 private:
  static constexpr std::size_t kStateBudget = 2'000'000;

  int used_of_word(std::uint64_t mask, const std::string& word) const {
    int used = 0;
    for (std::size_t j = 0; j < ref_.size(); ++j) {
      if ((mask >> j & 1U) != 0 && ref_[j] == word) ++used;
    }
    return used;
  }

  int search(std::size_t i, int prev, std::uint64_t mask) {
    if (exhausted_) return 0;
    if (i == cand_.size()) return 0;
    const Key key{i, prev, mask};
    if (const auto it = memo_.find(key); it != memo_.end()) return it->second;
    if (memo_.size() >= kStateBudget) {
      exhausted_ = true;
      return 0;
    }

    const std::string& word = cand_[i];
    const auto need_it = need_.find(word);
    const int need = need_it == need_.end() ? 0 : need_it->second;
    const int still_needed = need - used_of_word(mask, word);
    const auto rem_it = remaining_[i + 1].find(word);
    const int later = rem_it == remaining_[i + 1].end() ? 0 : rem_it->second;

    int best = std::numeric_limits<int>::min();
    if (later >= still_needed) best = search(i + 1, -1, mask);
    if (still_needed > 0) {
      for (std::size_t j = 0; j < ref_.size(); ++j) {
        if ((mask >> j & 1U) != 0 || ref_[j] != word) continue;
        const int bonus = prev >= 0 && static_cast<std::size_t>(prev) + 1 == j ? 1 : 0;
        best = std::max(best, bonus + search(i + 1, static_cast<int>(j), mask | (1ULL << j)));
      }
    }
    memo_.emplace(key, best);
    return best;
  }

  struct Key {
    std::size_t i;
    int prev;
    std::uint64_t mask;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      std::size_t h = std::hash<std::uint64_t>{}(k.mask);
      h ^= std::hash<std::size_t>{}(k.i * 131 + static_cast<std::size_t>(k.prev + 1)) +
           0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      return h;
    }
  };

  const Tokens& cand_;
  const Tokens& ref_;
  std::map<std::string, int> need_;
  std::vector<std::map<std::string, int>> remaining_;
  int matches_ = 0;
  bool exhausted_ = false;
  std::unordered_map<Key, int, KeyHash> memo_;
};

// Left-to-right alignment preferring continuations; used only when the
// exact search exceeds its budget.
int greedy_adjacencies(const Tokens& cand, const Tokens& ref) {
  std::map<std::string, int> need;
  {
    std::map<std::string, int> rc;
    for (const auto& t : ref) ++rc[t];
    for (const auto& t : cand) {
      if (rc[t] > 0) {
        --rc[t];
        ++need[t];
      }
    }
  }
  std::vector<bool> used(ref.size(), false);
  int prev = -1;
  int adjacent = 0;
  for (const auto& word : cand) {
    if (need[word] == 0) {
      prev = -1;
      continue;
    }
    int pick = -1;
    if (prev >= 0 && static_cast<std::size_t>(prev) + 1 < ref.size() &&
        !used[static_cast<std::size_t>(prev) + 1] && ref[static_cast<std::size_t>(prev) + 1] == word) {
      pick = prev + 1;
      ++adjacent;
    } else {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == word) {
          pick = static_cast<int>(j);
          break;
        }
      }
    }
    used[static_cast<std::size_t>(pick)] = true;
    --need[word];
    prev = pick;
  }
  return adjacent;
}

double meteor_from_alignment(const MeteorAlignment& alignment, std::size_t cand_len,
                             std::size_t ref_len) {
  if (alignment.matches == 0) return 0.0;
  const double m = alignment.matches;
  const double precision = m / static_cast<double>(cand_len);
  const double recall = m / static_cast<double>(ref_len);
  const double f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
  const double frag = static_cast<double>(alignment.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return f_mean * (1.0 - penalty);
}

struct CiderVector {
  std::array<std::map<std::string, double>, kMaxOrder> weights;
  std::array<double, kMaxOrder> norm{};
  std::size_t length = 0;
};

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ", ";
    out += ids[i];
  }
  return out;
}

template <typename A, typename B>
std::vector<std::string> key_difference(const std::map<std::string, A>& a,
                                        const std::map<std::string, B>& b) {
  std::vector<std::string> diff;
  for (const auto& [id, _] : a) {
    if (!b.contains(id)) diff.push_back(id);
  }
  for (const auto& [id, _] : b) {
    if (!a.contains(id)) diff.push_back(id);
  }
  std::sort(diff.begin(), diff.end());
  diff.erase(std::unique(diff.begin(), diff.end()), diff.end());
  return diff;
}

}  // namespace

SegScores iou_from_confusion(const ConfusionCounts& c) {
  if (c.total() <= 0) {
    throw Error(ErrorKind::EmptyInput, "iou_from_confusion: no pixels");
  }
  SegScores scores;
  const std::int64_t union_c = c.tp + c.fp + c.fn;
  const std::int64_t union_nc = c.tn + c.fp + c.fn;
  double sum = 0.0;
  int defined = 0;
  if (union_nc > 0) {
    scores.iou_nc = 100.0 * static_cast<double>(c.tn) / static_cast<double>(union_nc);
    sum += *scores.iou_nc;
    ++defined;
  }
  if (union_c > 0) {
    scores.iou_c = 100.0 * static_cast<double>(c.tp) / static_cast<double>(union_c);
    sum += *scores.iou_c;
    ++defined;
  }
  scores.miou = defined == 0 ? 100.0 : sum / defined;
  return scores;
}

BleuScores bleu(const std::vector<Tokens>& candidates,
                const std::vector<ReferenceGroup>& references) {
  check_corpus(candidates, references, "bleu");
  std::array<std::int64_t, kMaxOrder> clipped{};
  std::array<std::int64_t, kMaxOrder> total{};
  std::int64_t cand_len = 0;
  std::int64_t ref_len = 0;

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& cand = candidates[i];
    const ReferenceGroup& group = references[i];
    const auto c = static_cast<std::int64_t>(cand.size());
    cand_len += c;
    std::int64_t closest = static_cast<std::int64_t>(group.front().size());
    for (const auto& ref : group) {
      const auto r = static_cast<std::int64_t>(ref.size());
      const auto d = std::llabs(r - c);
      const auto best_d = std::llabs(closest - c);
      if (d < best_d || (d == best_d && r < closest)) closest = r;
    }
    ref_len += closest;

    for (int n = 1; n <= kMaxOrder; ++n) {
      const NgramCounts cand_counts = ngrams(cand, n);
      NgramCounts max_ref;
      for (const auto& ref : group) {
        for (const auto& [g, count] : ngrams(ref, n)) {
          auto& slot = max_ref[g];
          slot = std::max(slot, count);
        }
      }
      for (const auto& [g, count] : cand_counts) {
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) clipped[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
        total[static_cast<std::size_t>(n - 1)] += count;
      }
    }
  }

  BleuScores scores;
  if (cand_len == 0) return scores;
  const double brevity =
      cand_len < ref_len
          ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len))
          : 1.0;
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto k = static_cast<std::size_t>(n - 1);
    if (clipped[k] == 0 || total[k] == 0) zero = true;
    if (!zero) {
      log_sum += std::log(static_cast<double>(clipped[k]) / static_cast<double>(total[k]));
      scores.b[k] = brevity * std::exp(log_sum / n);
    }
  }
  return scores;
}

double rouge_l_sentence(const Tokens& candidate, const ReferenceGroup& references) {
  double best = 0.0;
  for (const auto& ref : references) {
    if (candidate.empty() || ref.empty()) continue;
    const auto lcs = static_cast<double>(lcs_length(candidate, ref));
    if (lcs == 0.0) continue;
    const double precision = lcs / static_cast<double>(candidate.size());
    const double recall = lcs / static_cast<double>(ref.size());
    const double beta2 = kRougeBeta * kRougeBeta;
    const double f = (1.0 + beta2) * precision * recall / (recall + beta2 * precision);
    best = std::max(best, f);
  }
  return best;
}

double rouge_l(const std::vector<Tokens>& candidates,
               const std::vector<ReferenceGroup>& references) {
  check_corpus(candidates, references, "rouge_l");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    sum += rouge_l_sentence(candidates[i], references[i]);
  }
  return sum / static_cast<double>(candidates.size());
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  ChunkMinimizer search(candidate, reference);
  MeteorAlignment alignment;
  alignment.matches = search.matches();
  if (alignment.matches == 0) return alignment;
  int adjacent = search.max_adjacencies();
  if (adjacent < 0) adjacent = greedy_adjacencies(candidate, reference);
  alignment.chunks = alignment.matches - adjacent;
  return alignment;
}

double meteor_lite_sentence(const Tokens& candidate, const ReferenceGroup& references) {
  double best = 0.0;
  for (const auto& ref : references) {
    if (candidate.empty() || ref.empty()) continue;
    best = std::max(best, meteor_from_alignment(meteor_align(candidate, ref), candidate.size(),
                                                ref.size()));
  }
  return best;
}

double meteor_lite(const std::vector<Tokens>& candidates,
                   const std::vector<ReferenceGroup>& references) {
  check_corpus(candidates, references, "meteor_lite");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    sum += meteor_lite_sentence(candidates[i], references[i]);
  }
  return sum / static_cast<double>(candidates.size());
}

std::vector<double> cider_d_per_candidate(const std::vector<Tokens>& candidates,
                                          const std::vector<ReferenceGroup>& references) {
  check_corpus(candidates, references, "cider_d");
  std::map<std::string, int> document_frequency;
  for (const auto& group : references) {
    std::set<std::string> seen;
    for (const auto& ref : group) {
      for (int n = 1; n <= kMaxOrder; ++n) {
        for (const auto& [g, _] : ngrams(ref, n)) seen.insert(g);
      }
    }
    for (const auto& g : seen) ++document_frequency[g];
  }
  const double log_docs = std::log(static_cast<double>(references.size()));

  auto vectorize = [&](const Tokens& tokens) {
    CiderVector v;
    v.length = tokens.size();
    for (int n = 1; n <= kMaxOrder; ++n) {
      const auto k = static_cast<std::size_t>(n - 1);
      for (const auto& [g, count] : ngrams(tokens, n)) {
        const auto it = document_frequency.find(g);
        const double df = it == document_frequency.end() ? 0.0 : it->second;
        const double w = count * (log_docs - std::log(std::max(1.0, df)));
        v.weights[k][g] = w;
        v.norm[k] += w * w;
      }
      v.norm[k] = std::sqrt(v.norm[k]);
    }
    return v;
  };

  std::vector<double> scores(candidates.size(), 0.0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const CiderVector hyp = vectorize(candidates[i]);
    std::array<double, kMaxOrder> sum{};
    for (const auto& ref_tokens : references[i]) {
      const CiderVector ref = vectorize(ref_tokens);
      const double delta = static_cast<double>(hyp.length) - static_cast<double>(ref.length);
      const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
      for (std::size_t k = 0; k < static_cast<std::size_t>(kMaxOrder); ++k) {
        double dot = 0.0;
        for (const auto& [g, w] : hyp.weights[k]) {
          const auto it = ref.weights[k].find(g);
          if (it == ref.weights[k].end()) continue;
          dot += std::min(w, it->second) * it->second;
        }
        if (hyp.norm[k] != 0.0 && ref.norm[k] != 0.0) {
          sum[k] += dot / (hyp.norm[k] * ref.norm[k]) * penalty;
        }
      }
    }
    double mean = 0.0;
    for (double s : sum) mean += s;
    mean /= kMaxOrder;
    scores[i] = mean / static_cast<double>(references[i].size()) * 10.0;
  }
  return scores;
}

double cider_d(const std::vector<Tokens>& candidates,
               const std::vector<ReferenceGroup>& references) {
  const auto per = cider_d_per_candidate(candidates, references);
  double sum = 0.0;
  for (double s : per) sum += s;
  return sum / static_cast<double>(per.size());
}

CaptionScores score_captions(const std::vector<Tokens>& candidates,
                             const std::vector<ReferenceGroup>& references) {
  CaptionScores scores;
  scores.bleu = bleu(candidates, references);
  scores.meteor = meteor_lite(candidates, references);
  scores.rouge_l = rouge_l(candidates, references);
  scores.cider_d = cider_d(candidates, references);
  return scores;
}

EvalReport evaluate_dataset(const EvalInputs& inputs, const EvalOptions& options) {
  const bool detection = !inputs.gt_masks.empty() || !inputs.pred_masks.empty();
  const bool captioning = !inputs.ref_captions.empty() || !inputs.cand_captions.empty();
  if (!detection && !captioning) {
    throw Error(ErrorKind::EmptyInput, "evaluate_dataset: no masks and no captions supplied");
  }

  std::vector<std::string> mismatched;
  if (detection) {
    const auto d = key_difference(inputs.gt_masks, inputs.pred_masks);
    mismatched.insert(mismatched.end(), d.begin(), d.end());
  }
  if (captioning) {
    const auto d = key_difference(inputs.ref_captions, inputs.cand_captions);
    mismatched.insert(mismatched.end(), d.begin(), d.end());
  }
  if (detection && captioning) {
    const auto d = key_difference(inputs.gt_masks, inputs.ref_captions);
    mismatched.insert(mismatched.end(), d.begin(), d.end());
  }
  if (!mismatched.empty()) {
    std::sort(mismatched.begin(), mismatched.end());
    mismatched.erase(std::unique(mismatched.begin(), mismatched.end()), mismatched.end());
    throw Error(ErrorKind::IdMismatch,
                fmt::format("evaluate_dataset: ids not aligned across inputs: {}",
                            join_ids(mismatched)));
  }

  std::vector<std::string> ids;
  if (detection) {
    for (const auto& [id, _] : inputs.gt_masks) ids.push_back(id);
  } else {
    for (const auto& [id, _] : inputs.ref_captions) ids.push_back(id);
  }

  EvalReport report;
  report.dataset_id = options.dataset_id;
  report.model = options.model;
  report.n_pairs = ids.size();
  std::vector<PairEval> per_pair(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) per_pair[i].pair_id = ids[i];

  if (detection) {
    detail::parallel_for(ids.size(), options.workers, [&](std::size_t i) {
      const auto gt = binarize_mask(inputs.gt_masks.at(ids[i]));
      const auto pred = binarize_mask(inputs.pred_masks.at(ids[i]));
      try {
        per_pair[i].confusion = compare_masks(gt, pred);
      } catch (const Error& e) {
        throw Error(e.kind(), fmt::format("pair '{}': {}", ids[i], e.what()));
      }
      per_pair[i].seg = iou_from_confusion(*per_pair[i].confusion);
    });
    ConfusionCounts global;
    for (const auto& p : per_pair) global += *p.confusion;
    report.confusion = global;
    report.seg = iou_from_confusion(global);
  } else {
    report.notes.push_back("detection channel absent");
  }

  if (captioning) {
    std::vector<Tokens> candidates;
    std::vector<ReferenceGroup> references;
    candidates.reserve(ids.size());
    references.reserve(ids.size());
    for (const auto& id : ids) {
      candidates.push_back(inputs.cand_captions.at(id));
      references.push_back(inputs.ref_captions.at(id));
    }
    check_corpus(candidates, references, "evaluate_dataset");
    std::vector<double> meteor(ids.size());
    std::vector<double> rouge(ids.size());
    detail::parallel_for(ids.size(), options.workers, [&](std::size_t i) {
      meteor[i] = meteor_lite_sentence(candidates[i], references[i]);
      rouge[i] = rouge_l_sentence(candidates[i], references[i]);
    });
    const auto cider = cider_d_per_candidate(candidates, references);

    CaptionScores cap;
    cap.bleu = bleu(candidates, references);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      cap.meteor += meteor[i];
      cap.rouge_l += rouge[i];
      cap.cider_d += cider[i];
      per_pair[i].meteor = meteor[i];
      per_pair[i].rouge_l = rouge[i];
      per_pair[i].cider_d = cider[i];
    }
    const auto n = static_cast<double>(ids.size());
    cap.meteor /= n;
    cap.rouge_l /= n;
    cap.cider_d /= n;
    report.cap = cap;
    report.notes.push_back(
        "METEOR is meteor_lite: exact unigram matches only, no stemming or synonyms; values "
        "are not comparable with published METEOR scores");
  } else {
    report.notes.push_back("captioning channel absent");
  }

  if (options.per_pair) report.per_pair = std::move(per_pair);
  return report;
}

}  // namespace forestchat
