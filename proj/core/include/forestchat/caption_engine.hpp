#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "forestchat/mask_analytics.hpp"

namespace forestchat {

using Tokens = std::vector<std::string>;

/// Lowercases, splits on whitespace and strips leading/trailing ASCII
/// punctuation from each word. Words left empty are dropped; numerals such
/// as "6.2" survive as single tokens.
Tokens normalize_tokens(std::string_view text);

std::string join_tokens(const Tokens& tokens);

enum class CaptionOrigin { Human, RuleExtent, RulePatch, RuleLocation, RuleSummary };

std::string_view to_string(CaptionOrigin origin);
/// Accepts the names produced by to_string. Throws Error{SchemaError}.
CaptionOrigin caption_origin_from_string(std::string_view name);

struct Caption {
  Tokens tokens;
  CaptionOrigin origin = CaptionOrigin::Human;
  friend bool operator==(const Caption&, const Caption&) = default;
};

struct CaptionSet {
  std::string pair_id;
  std::vector<Caption> captions;
  friend bool operator==(const CaptionSet&, const CaptionSet&) = default;
};

enum class Severity { None, Minimal, Minor, Moderate, Major, Severe };

std::string_view to_string(Severity severity);

/// Upper edges of the minimal/minor/moderate/major buckets. 0 alone is
/// "none"; everything above the last edge is "severe". Buckets are closed on
/// the right: (0,1], (1,5], (5,15], (15,40], (40,100].
struct SeverityScale {
  std::array<double, 4> upper_edges{1.0, 5.0, 15.0, 40.0};
};

struct SeverityLevel {
  Severity name = Severity::None;
  double lower = 0.0;  // exclusive, except for None
  double upper = 0.0;  // inclusive
};

/// Throws Error{OutOfRange} outside [0,100] or for NaN.
SeverityLevel severity_bucket(double change_percent, const SeverityScale& scale = {});

enum class Patchiness { None, Single, Few, Scattered };
std::string_view to_string(Patchiness patchiness);
/// 1 patch is single, 2-5 few, more than 5 scattered.
Patchiness patchiness_of(int num_patches);

/// One template per rule origin plus a no-change variant for each. Templates
/// use {percent} {severity} {n_patches} {patchiness} {cell} {largest_percent}.
struct CaptionTemplates {
  int version = 1;
  std::map<CaptionOrigin, std::string> change;
  std::map<CaptionOrigin, std::string> no_change;

  static const CaptionTemplates& defaults();
  /// Parses the `key = template` text format; see core/assets/caption_templates.txt.
  /// Throws Error{SchemaError} on unknown keys, unknown placeholders or a
  /// missing origin.
  static CaptionTemplates parse(std::string_view text);
  static CaptionTemplates load(const std::string& path);
};

/// The shipped template table, verbatim.
std::string_view default_caption_templates_text();

/// Fills a template from stats. Numbers are printed with one decimal.
std::string instantiate_template(std::string_view tmpl, const MaskStats& stats,
                                 const SeverityScale& scale = {});

/// Four rule captions in the order extent, patch, location, summary.
CaptionSet generate_rule_captions(const MaskStats& stats, const std::string& pair_id,
                                  const CaptionTemplates& templates = CaptionTemplates::defaults(),
                                  const SeverityScale& scale = {});

}  // namespace forestchat
