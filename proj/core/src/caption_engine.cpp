#include "forestchat/caption_engine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "assets.hpp"
#include "forestchat/error.hpp"

namespace forestchat {

namespace {

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

constexpr std::array<CaptionOrigin, 4> kRuleOrigins = {
    CaptionOrigin::RuleExtent, CaptionOrigin::RulePatch, CaptionOrigin::RuleLocation,
    CaptionOrigin::RuleSummary};

std::string_view template_key(CaptionOrigin origin) {
  switch (origin) {
    case CaptionOrigin::RuleExtent: return "extent";
    case CaptionOrigin::RulePatch: return "patch";
    case CaptionOrigin::RuleLocation: return "location";
    case CaptionOrigin::RuleSummary: return "summary";
    case CaptionOrigin::Human: break;
  }
  return "human";
}

constexpr std::array<std::string_view, 6> kPlaceholders = {
    "percent", "severity", "n_patches", "patchiness", "cell", "largest_percent"};

void check_placeholders(std::string_view key, std::string_view tmpl) {
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string_view::npos) {
    const auto close = tmpl.find('}', pos);
    if (close == std::string_view::npos) {
      throw Error(ErrorKind::SchemaError, fmt::format("template '{}': unclosed placeholder", key));
    }
    const auto name = tmpl.substr(pos + 1, close - pos - 1);
    if (std::find(kPlaceholders.begin(), kPlaceholders.end(), name) == kPlaceholders.end()) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("template '{}': unknown placeholder {{{}}}", key, name));
    }
    pos = close + 1;
  }
}

std::string one_decimal(double value) { return fmt::format("{:.1f}", value); }

std::string cell_phrase(const MaskStats& stats) {
  std::string out;
  for (std::size_t i = 0; i < stats.dominant_cells.size(); ++i) {
    if (i > 0) out += " and ";
    out += to_string(stats.dominant_cells[i]);
  }
  return out.empty() ? std::string("image") : out;
}

}  // namespace

Tokens normalize_tokens(std::string_view text) {
  Tokens tokens;
  std::string word;
  auto flush = [&] {
    std::size_t begin = 0;
    std::size_t end = word.size();
    while (begin < end && is_punct(word[begin])) ++begin;
    while (end > begin && is_punct(word[end - 1])) --end;
    if (end > begin) tokens.push_back(word.substr(begin, end - begin));
    word.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return tokens;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::string_view to_string(CaptionOrigin origin) {
  switch (origin) {
    case CaptionOrigin::Human: return "human";
    case CaptionOrigin::RuleExtent: return "rule_extent";
    case CaptionOrigin::RulePatch: return "rule_patch";
    case CaptionOrigin::RuleLocation: return "rule_location";
    case CaptionOrigin::RuleSummary: return "rule_summary";
  }
  return "human";
}

CaptionOrigin caption_origin_from_string(std::string_view name) {
  for (auto origin : {CaptionOrigin::Human, CaptionOrigin::RuleExtent, CaptionOrigin::RulePatch,
                      CaptionOrigin::RuleLocation, CaptionOrigin::RuleSummary}) {
    if (to_string(origin) == name) return origin;
  }
  throw Error(ErrorKind::SchemaError, fmt::format("unknown caption origin '{}'", name));
}

std::string_view to_string(Severity severity) {
  switch (severity) {
    case Severity::None: return "none";
    case Severity::Minimal: return "minimal";
    case Severity::Minor: return "minor";
    case Severity::Moderate: return "moderate";
    case Severity::Major: return "major";
    case Severity::Severe: return "severe";
  }
  return "none";
}

SeverityLevel severity_bucket(double change_percent, const SeverityScale& scale) {
  if (!(change_percent >= 0.0 && change_percent <= 100.0)) {
    throw Error(ErrorKind::OutOfRange,
                fmt::format("change percent {} outside [0, 100]", change_percent));
  }
  if (change_percent == 0.0) return {Severity::None, 0.0, 0.0};
  double lower = 0.0;
  for (std::size_t i = 0; i < scale.upper_edges.size(); ++i) {
    if (change_percent <= scale.upper_edges[i]) {
      return {static_cast<Severity>(i + 1), lower, scale.upper_edges[i]};
    }
    lower = scale.upper_edges[i];
  }
  return {Severity::Severe, lower, 100.0};
}

std::string_view to_string(Patchiness patchiness) {
  switch (patchiness) {
    case Patchiness::None: return "none";
    case Patchiness::Single: return "single";
    case Patchiness::Few: return "few";
    case Patchiness::Scattered: return "scattered";
  }
  return "none";
}

Patchiness patchiness_of(int num_patches) {
  if (num_patches <= 0) return Patchiness::None;
  if (num_patches == 1) return Patchiness::Single;
  if (num_patches <= 5) return Patchiness::Few;
  return Patchiness::Scattered;
}

const CaptionTemplates& CaptionTemplates::defaults() {
  static const CaptionTemplates table = parse(default_caption_templates_text());
  return table;
}

std::string_view default_caption_templates_text() { return assets::kCaptionTemplates; }

CaptionTemplates CaptionTemplates::parse(std::string_view text) {
  CaptionTemplates table;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("templates line {}: expected 'key = template'", line_no));
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key == "version") {
      try {
        table.version = std::stoi(value);
      } catch (const std::exception&) {
        throw Error(ErrorKind::SchemaError,
                    fmt::format("templates line {}: bad version '{}'", line_no, value));
      }
      continue;
    }
    const bool none_variant = key.size() > 5 && key.ends_with(".none");
    const std::string base = none_variant ? key.substr(0, key.size() - 5) : key;
    const auto origin =
        std::find_if(kRuleOrigins.begin(), kRuleOrigins.end(),
                     [&](CaptionOrigin o) { return template_key(o) == base; });
    if (origin == kRuleOrigins.end()) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("templates line {}: unknown key '{}'", line_no, key));
    }
    if (value.empty()) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("templates line {}: empty template for '{}'", line_no, key));
    }
    check_placeholders(key, value);
    (none_variant ? table.no_change : table.change)[*origin] = value;
  }
  for (auto origin : kRuleOrigins) {
    if (!table.change.contains(origin) || !table.no_change.contains(origin)) {
      throw Error(ErrorKind::SchemaError,
                  fmt::format("templates: missing '{}' or '{}.none'", template_key(origin),
                              template_key(origin)));
    }
  }
  return table;
}

CaptionTemplates CaptionTemplates::load(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw Error(ErrorKind::IoError, fmt::format("cannot open templates {}", path));
  std::stringstream buffer;
  buffer << file.rdbuf();
  return parse(buffer.str());
}

std::string instantiate_template(std::string_view tmpl, const MaskStats& stats,
                                 const SeverityScale& scale) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) {
      throw Error(ErrorKind::SchemaError, "template has an unclosed placeholder");
    }
    const auto name = tmpl.substr(open + 1, close - open - 1);
    if (name == "percent") {
      out += one_decimal(stats.change_percent);
    } else if (name == "severity") {
      out += to_string(severity_bucket(stats.change_percent, scale).name);
    } else if (name == "n_patches") {
      out += std::to_string(stats.num_patches);
    } else if (name == "patchiness") {
      out += to_string(patchiness_of(stats.num_patches));
    } else if (name == "cell") {
      out += cell_phrase(stats);
    } else if (name == "largest_percent") {
      out += one_decimal(stats.largest_patch_percent);
    } else {
      throw Error(ErrorKind::SchemaError, fmt::format("unknown placeholder {{{}}}", name));
    }
    pos = close + 1;
  }
  return out;
}

CaptionSet generate_rule_captions(const MaskStats& stats, const std::string& pair_id,
                                  const CaptionTemplates& templates, const SeverityScale& scale) {
  const bool no_change = stats.change_percent == 0.0;
  CaptionSet set;
  set.pair_id = pair_id;
  for (auto origin : kRuleOrigins) {
    const auto& table = no_change ? templates.no_change : templates.change;
    set.captions.push_back(
        {normalize_tokens(instantiate_template(table.at(origin), stats, scale)), origin});
  }
  return set;
}

}  // namespace forestchat
