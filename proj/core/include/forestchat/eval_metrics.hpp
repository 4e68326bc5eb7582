#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forestchat/caption_engine.hpp"
#include "forestchat/mask_analytics.hpp"

namespace forestchat {

/// Segmentation scores in percent. A class whose union is empty has no IoU
/// and is left out of the mean.
struct SegScores {
  double miou = 0.0;
  std::optional<double> iou_nc;
  std::optional<double> iou_c;
};

/// Throws Error{EmptyInput} when the confusion matrix is empty.
SegScores iou_from_confusion(const ConfusionCounts& counts);

/// One candidate per pair, scored against a group of references.
using ReferenceGroup = std::vector<Tokens>;

struct BleuScores {
  std::array<double, 4> b{};  // b[n-1] is BLEU-n
};

/// Corpus BLEU-1..4: clipped n-gram counts summed over the corpus, geometric
/// mean of precisions, brevity penalty from the closest reference length
/// (shorter wins ties). No smoothing. Throws Error{EmptyCorpus} or
/// Error{InvalidArgument} on mismatched sizes or an empty reference group.
BleuScores bleu(const std::vector<Tokens>& candidates,
                const std::vector<ReferenceGroup>& references);

inline constexpr double kRougeBeta = 1.2;

/// LCS F-measure per candidate (best reference), averaged over the corpus.
double rouge_l(const std::vector<Tokens>& candidates,
               const std::vector<ReferenceGroup>& references);
double rouge_l_sentence(const Tokens& candidate, const ReferenceGroup& references);

/// Exact-match METEOR: maximal unigram alignment with the fewest chunks,
/// F = 10PR/(R+9P), penalty 0.5*(chunks/m)^3. Averaged over the corpus.
double meteor_lite(const std::vector<Tokens>& candidates,
                   const std::vector<ReferenceGroup>& references);
double meteor_lite_sentence(const Tokens& candidate, const ReferenceGroup& references);

struct MeteorAlignment {
  int matches = 0;
  int chunks = 0;
};
/// Maximal one-to-one exact alignment between two sentences, minimising chunks.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);

inline constexpr double kCiderSigma = 6.0;

/// CIDEr-D per candidate, in [0, 10]. Document frequencies come from the
/// reference groups of this corpus.
std::vector<double> cider_d_per_candidate(const std::vector<Tokens>& candidates,
                                          const std::vector<ReferenceGroup>& references);
double cider_d(const std::vector<Tokens>& candidates,
               const std::vector<ReferenceGroup>& references);

struct CaptionScores {
  BleuScores bleu;
  double meteor = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
};

/// All caption metrics on one corpus.
CaptionScores score_captions(const std::vector<Tokens>& candidates,
                             const std::vector<ReferenceGroup>& references);

struct PairEval {
  std::string pair_id;
  std::optional<ConfusionCounts> confusion;
  std::optional<SegScores> seg;
  std::optional<double> meteor;
  std::optional<double> rouge_l;
  std::optional<double> cider_d;
};

struct EvalReport {
  std::string dataset_id;
  std::string model = "external";
  std::optional<ConfusionCounts> confusion;
  std::optional<SegScores> seg;
  std::optional<CaptionScores> cap;
  std::size_t n_pairs = 0;
  std::vector<PairEval> per_pair;
  std::vector<std::string> notes;

  bool has_detection() const noexcept { return seg.has_value(); }
  bool has_captioning() const noexcept { return cap.has_value(); }
};

struct EvalInputs {
  std::map<std::string, ChangeMask> gt_masks;
  std::map<std::string, ChangeMask> pred_masks;
  std::map<std::string, ReferenceGroup> ref_captions;
  std::map<std::string, Tokens> cand_captions;
};

struct EvalOptions {
  std::string dataset_id;
  std::string model = "external";
  bool per_pair = true;
  unsigned workers = 1;
};

/// Detection runs when masks are supplied, captioning when captions are.
/// Segmentation aggregates one global confusion matrix. Throws
/// Error{IdMismatch} listing ids present in one input but not another, or
/// Error{EmptyInput} when neither channel has data.
EvalReport evaluate_dataset(const EvalInputs& inputs, const EvalOptions& options);

}  // namespace forestchat
