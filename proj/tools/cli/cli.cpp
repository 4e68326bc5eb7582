#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "forestchat/agent.hpp"
#include "forestchat/error.hpp"
#include "forestchat/image_io.hpp"
#include "forestchat/pipeline.hpp"
#include "forestchat/records.hpp"
#include "forestchat/service.hpp"

namespace forestchat::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kEnvHelp =
    "Environment (LLM planner / composer, opt-in):\n"
    "  FORESTCHAT_LLM_BASE_URL   chat-completions base url, e.g. https://host/v1\n"
    "  FORESTCHAT_LLM_MODEL      model identifier\n"
    "  FORESTCHAT_LLM_API_KEY    bearer key (never logged)\n"
    "  FORESTCHAT_LLM_TIMEOUT    request timeout in seconds (default 30)\n";

struct Options {
  int verbosity = 0;
  std::string manifest;
  std::string pred_dir;
  std::string captions;
  std::string out;
  std::string format = "table";
  std::string keywords;
  std::string planner = "det";
  std::string compose = "template";
  int min_area = DetectionParams{}.min_area_px;
  int kernel_radius = DetectionParams{}.kernel_radius;
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string data_root;
  std::string static_dir;
  std::size_t max_upload_mb = 32;
  std::string split = "all";
  std::string model = "external";
  std::string epoch_a;
  std::string epoch_b;
  std::string mask;
  std::string pair_id;
  std::string levir_captions;
  std::string image_root;
  std::string transcript;
};

void write_or_print(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path));
  file << text;
}

ReportFormat report_format(const std::string& name) {
  return name == "record" ? ReportFormat::Record : ReportFormat::Table;
}

DetectionParams detection_params(const Options& o) {
  DetectionParams p;
  p.min_area_px = o.min_area;
  p.kernel_radius = o.kernel_radius;
  return p;
}

std::vector<std::string> split_keywords(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::shared_ptr<CompletionClient> make_llm_client(std::ostream& err) {
  LlmConfig config = LlmConfig::from_env();
  if (!config.configured()) {
    err << "warning: FORESTCHAT_LLM_BASE_URL / FORESTCHAT_LLM_MODEL not set; using the rule planner\n";
    return nullptr;
  }
  return std::make_shared<HttpCompletionClient>(std::move(config));
}

std::string stats_table(const MaskStats& s) {
  std::string out = fmt::format("changed pixels: {} of {}\n", s.changed_pixels,
                                static_cast<std::int64_t>(s.width) * s.height);
  out += fmt::format("change: {:.2f}% ({})\n", s.change_percent,
                     to_string(severity_bucket(s.change_percent).name));
  out += fmt::format("patches: {} ({})\n", s.num_patches, to_string(patchiness_of(s.num_patches)));
  out += fmt::format("largest patch: {:.2f}%", s.largest_patch_percent);
  if (s.largest_patch_cell) out += fmt::format(" in {}", to_string(*s.largest_patch_cell));
  out += "\n";
  std::string cells;
  for (auto c : s.dominant_cells) cells += (cells.empty() ? "" : ", ") + std::string(to_string(c));
  out += fmt::format("dominant cells: {}\n", cells.empty() ? "-" : cells);
  return out;
}

std::string captions_text(const CaptionSet& set) {
  std::string out;
  for (const auto& c : set.captions) out += fmt::format("{}: {}\n", to_string(c.origin), join_tokens(c.tokens));
  return out;
}

int cmd_eval(const Options& o, std::ostream& out) {
  EvalRequest request;
  request.manifest = o.manifest;
  if (!o.pred_dir.empty()) request.pred_dir = fs::path(o.pred_dir);
  if (!o.captions.empty()) request.captions = fs::path(o.captions);
  request.split = o.split;
  request.model = o.model;
  const EvalReport report = run_eval(request);
  write_or_print(emit_report(report, report_format(o.format)), o.out, out);
  return 0;
}

int cmd_detect(const Options& o, std::ostream& out) {
  const ImagePair pair = load_image_pair(o.epoch_a, o.epoch_b);
  const DetectionResult result = detect_changes(pair, detection_params(o));
  for (const auto& w : result.warnings) spdlog::warn("{}", w);
  ChangeMask reference = result.mask;
  if (!o.mask.empty()) {
    reference = binarize_mask(read_mask(o.mask, MaskProvenance::GroundTruth));
    require_same_dims(reference, result.mask);
  }
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_mask_png(result.mask, dir / (pair.id + "_mask.png"));
  write_png(render_comparison_overlay(reference, result.mask, pair.epoch_b), dir / (pair.id + "_overlay.png"));
  const MaskStats stats = compute_stats(result.mask);
  if (o.format == "record") {
    nlohmann::json record = {{"pair_id", pair.id},
                             {"threshold", result.threshold},
                             {"no_change_detected", result.no_change_detected},
                             {"stats", to_record(stats)},
                             {"mask", (dir / (pair.id + "_mask.png")).string()},
                             {"overlay", (dir / (pair.id + "_overlay.png")).string()}};
    if (!o.mask.empty()) {
      const ConfusionCounts c = compare_masks(reference, result.mask);
      record["confusion"] = to_record(c);
      record["seg"] = to_record(iou_from_confusion(c));
    }
    out << record.dump(2) << "\n";
  } else {
    out << fmt::format("pair: {}\n", pair.id) << stats_table(stats);
    if (!o.mask.empty()) {
      const SegScores seg = iou_from_confusion(compare_masks(reference, result.mask));
      out << fmt::format("mIoU vs reference: {:.2f}\n", seg.miou);
    }
    out << fmt::format("wrote {} and {}\n", (dir / (pair.id + "_mask.png")).string(),
                       (dir / (pair.id + "_overlay.png")).string());
  }
  return 0;
}

int cmd_caption(const Options& o, std::ostream& out) {
  const ChangeMask mask = binarize_mask(read_mask(o.mask, MaskProvenance::GroundTruth));
  const std::string pair_id = o.pair_id.empty() ? fs::path(o.mask).stem().string() : o.pair_id;
  const CaptionSet set = generate_rule_captions(compute_stats(mask), pair_id);
  if (o.format == "record") {
    write_or_print(to_record(set).dump(2) + "\n", o.out, out);
  } else {
    write_or_print(captions_text(set), o.out, out);
  }
  return 0;
}

int cmd_stats(const Options& o, std::ostream& out) {
  const Dataset d = load_manifest(o.manifest);
  const DatasetStats s = corpus_statistics(d, std::max(1u, std::thread::hardware_concurrency()));
  if (o.format == "record") {
    write_or_print(to_record(s).dump(2) + "\n", o.out, out);
  } else {
    write_or_print(format_dataset_stats(s, d.id), o.out, out);
  }
  return 0;
}

int cmd_subset(const Options& o, std::ostream& out, std::ostream& err) {
  Dataset source;
  if (!o.levir_captions.empty()) {
    if (o.image_root.empty()) throw CLI::ValidationError("--image-root", "required with --levir-captions");
    source = load_levir_cc(o.levir_captions, o.image_root);
  } else if (!o.manifest.empty()) {
    source = load_manifest(o.manifest);
  } else {
    throw CLI::ValidationError("subset", "give --manifest or --levir-captions");
  }
  const auto keywords = o.keywords.empty() ? default_tree_keywords() : split_keywords(o.keywords);
  const SubsetReport report = build_levir_trees_manifest(source, keywords);
  save_manifest(report.dataset, o.out);
  for (auto split : kSplitNames) {
    const std::string name(split);
    out << fmt::format("{}: {} of {} pairs kept\n", name, report.subset_counts.at(name),
                       report.source_counts.at(name));
  }
  for (const auto& d : report.discrepancies) err << "discrepancy: " << d << "\n";
  out << fmt::format("wrote {}\n", o.out);
  return 0;
}

int cmd_serve(const Options& o, std::ostream& err) {
  ServiceConfig config;
  config.host = o.host;
  config.port = o.port;
  if (!o.data_root.empty()) config.data_root = fs::path(o.data_root);
  if (!o.static_dir.empty()) config.static_dir = fs::path(o.static_dir);
  config.max_upload_bytes = o.max_upload_mb << 20;
  config.session_defaults.detection = detection_params(o);
  config.default_planner = o.planner == "llm" ? PlannerKind::Llm : PlannerKind::Deterministic;
  config.default_compose = o.compose == "llm" ? ComposeMode::Llm : ComposeMode::Template;
  std::shared_ptr<CompletionClient> llm;
  if (o.planner == "llm" || o.compose == "llm" || LlmConfig::from_env().configured()) llm = make_llm_client(err);
  Service service(config, llm);
  service.run();
  return 0;
}

void save_artifact(const Artifact& a, const fs::path& path) {
  if (const auto* m = std::get_if<ChangeMask>(&a.value)) {
    write_mask_png(*m, path);
  } else if (const auto* r = std::get_if<Raster>(&a.value)) {
    write_png(*r, path);
  } else {
    std::ofstream file(path);
    if (!file) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path.string()));
    file << artifact_record(a).dump(2) << "\n";
  }
}

int cmd_chat(const Options& o, std::ostream& out, std::ostream& err, std::istream& in) {
  SessionConfig config;
  config.detection = detection_params(o);
  if (!o.data_root.empty()) config.data_root = fs::path(o.data_root);
  Session session("cli", config);

  AgentOptions options;
  options.planner = o.planner == "llm" ? PlannerKind::Llm : PlannerKind::Deterministic;
  options.compose = o.compose == "llm" ? ComposeMode::Llm : ComposeMode::Template;
  std::shared_ptr<CompletionClient> llm;
  if (options.planner == PlannerKind::Llm || options.compose == ComposeMode::Llm) llm = make_llm_client(err);
  const Agent agent(make_builtin_registry(), llm);

  const auto load = [&](const std::string& a, const std::string& b, const std::string& m) {
    ImagePair pair = load_image_pair(a, b);
    std::optional<ChangeMask> gt;
    if (!m.empty()) gt = read_mask(m, MaskProvenance::GroundTruth);
    const std::string id = session.attach_pair(std::move(pair), std::move(gt));
    out << fmt::format("loaded pair as {}\n", id);
  };
  if (!o.epoch_a.empty() || !o.epoch_b.empty()) {
    if (o.epoch_a.empty() || o.epoch_b.empty()) {
      throw CLI::ValidationError("--epoch-a/--epoch-b", "give both epochs");
    }
    load(o.epoch_a, o.epoch_b, o.mask);
  }

  const bool interactive = &in == &std::cin && isatty(STDIN_FILENO);
  if (interactive) out << "forestchat chat; :help for commands\n";
  std::string line;
  while (true) {
    if (interactive) out << "> " << std::flush;
    if (!std::getline(in, line)) break;
    line.erase(0, line.find_first_not_of(" \t"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    if (line[0] == ':') {
      std::istringstream words(line.substr(1));
      std::string cmd;
      words >> cmd;
      try {
        if (cmd == "quit" || cmd == "q" || cmd == "exit") break;
        if (cmd == "help") {
          out << ":load A B [MASK]   load an image pair (relative to --data-root)\n"
                 ":artifacts         list artifacts\n"
                 ":save ID PATH      write an artifact (PNG for masks and overlays)\n"
                 ":transcript        print the conversation so far\n"
                 ":quit\n";
        } else if (cmd == "load") {
          std::string a, b, m;
          words >> a >> b >> m;
          if (b.empty()) {
            out << "usage: :load A B [MASK]\n";
          } else {
            const auto in_root = [&](const std::string& p) {
              if (p.empty() || !config.data_root || fs::path(p).is_absolute()) return p;
              return (*config.data_root / p).string();
            };
            load(in_root(a), in_root(b), in_root(m));
          }
        } else if (cmd == "artifacts") {
          for (const auto& a : session.artifacts()) {
            out << fmt::format("{} {} from {}\n", a->id, to_string(a->kind), a->produced_by);
          }
        } else if (cmd == "save") {
          std::string id, path;
          words >> id >> path;
          const auto a = session.artifact(id);
          if (!a || path.empty()) {
            out << "usage: :save ID PATH with an existing artifact id\n";
          } else {
            save_artifact(*a, path);
            out << fmt::format("wrote {}\n", path);
          }
        } else if (cmd == "transcript") {
          out << format_transcript(session);
        } else {
          out << fmt::format("unknown command :{}\n", cmd);
        }
      } catch (const Error& e) {
        out << fmt::format("error: {}: {}\n", to_string(e.kind()), e.what());
      }
      continue;
    }
    const TurnResult turn = agent.run_turn(session, line, options);
    out << turn.answer << "\n";
  }
  if (!o.transcript.empty()) write_or_print(format_transcript(session), o.transcript, out);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, std::istream& in) {
  Options o;
  CLI::App app{"forestchat: forest change detection, captioning and evaluation toolkit", "forestchat"};
  app.footer(kEnvHelp);
  app.require_subcommand(1, 1);
  app.add_flag("-v,--verbose", o.verbosity, "more logging (-v info, -vv debug)");
  const auto formats = CLI::IsMember({"table", "record"});

  auto* eval = app.add_subcommand("eval", "score prediction masks and/or captions against a manifest");
  eval->add_option("--manifest", o.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--pred-dir", o.pred_dir, "directory of <pair_id>.png prediction masks")->check(CLI::ExistingDirectory);
  eval->add_option("--captions", o.captions, "candidate captions JSON")->check(CLI::ExistingFile);
  eval->add_option("--split", o.split, "all, train, val or test")->check(CLI::IsMember({"all", "train", "val", "test"}));
  eval->add_option("--model", o.model, "model name for the report");
  eval->add_option("--format", o.format, "table or record")->check(formats);
  eval->add_option("--out", o.out, "write the report here instead of stdout");

  auto* detect = app.add_subcommand("detect", "classical change detection on one pair");
  detect->add_option("a", o.epoch_a, "earlier epoch image")->required()->check(CLI::ExistingFile);
  detect->add_option("b", o.epoch_b, "later epoch image")->required()->check(CLI::ExistingFile);
  detect->add_option("--mask", o.mask, "reference mask for the overlay and mIoU")->check(CLI::ExistingFile);
  detect->add_option("--out", o.out, "output directory")->required();
  detect->add_option("--min-area", o.min_area, "smallest kept patch in pixels")->check(CLI::NonNegativeNumber);
  detect->add_option("--kernel-radius", o.kernel_radius, "morphology radius")->check(CLI::NonNegativeNumber);
  detect->add_option("--format", o.format, "table or record")->check(formats);

  auto* caption = app.add_subcommand("caption", "four rule captions for a change mask");
  caption->add_option("--mask", o.mask, "change mask image")->required()->check(CLI::ExistingFile);
  caption->add_option("--pair-id", o.pair_id, "pair id (default: mask file stem)");
  caption->add_option("--format", o.format, "table or record")->check(formats);
  caption->add_option("--out", o.out, "write here instead of stdout");

  auto* stats = app.add_subcommand("stats", "corpus statistics for a manifest");
  stats->add_option("--manifest", o.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  stats->add_option("--format", o.format, "table or record")->check(formats);
  stats->add_option("--out", o.out, "write here instead of stdout");

  auto* subset = app.add_subcommand("subset", "keyword-filtered tree subset of a LEVIR-style dataset");
  subset->add_option("--manifest", o.manifest, "source manifest")->check(CLI::ExistingFile);
  subset->add_option("--levir-captions", o.levir_captions, "LevirCCcaptions.json")->check(CLI::ExistingFile);
  subset->add_option("--image-root", o.image_root, "LEVIR image root")->check(CLI::ExistingDirectory);
  subset->add_option("--keywords", o.keywords, "comma-separated keywords (default: tree vocabulary)");
  subset->add_option("--out", o.out, "output manifest")->required();

  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  serve->add_option("--port", o.port, "port (0 picks one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", o.host, "bind address");
  serve->add_option("--data-root", o.data_root, "root for server-side paths")->check(CLI::ExistingDirectory);
  serve->add_option("--static-dir", o.static_dir, "built web UI to serve at /");
  serve->add_option("--max-upload-mb", o.max_upload_mb, "upload size cap");
  serve->add_option("--planner", o.planner, "default planner")->check(CLI::IsMember({"det", "llm"}));
  serve->add_option("--min-area", o.min_area, "default smallest patch")->check(CLI::NonNegativeNumber);
  serve->add_option("--kernel-radius", o.kernel_radius, "default morphology radius")->check(CLI::NonNegativeNumber);

  auto* chat = app.add_subcommand("chat", "offline chat REPL over stdin");
  chat->add_option("--planner", o.planner, "det (default) or llm")->check(CLI::IsMember({"det", "llm"}));
  chat->add_option("--compose", o.compose, "template (default) or llm")->check(CLI::IsMember({"template", "llm"}));
  chat->add_option("--epoch-a", o.epoch_a, "preload earlier epoch")->check(CLI::ExistingFile);
  chat->add_option("--epoch-b", o.epoch_b, "preload later epoch")->check(CLI::ExistingFile);
  chat->add_option("--mask", o.mask, "preload reference mask")->check(CLI::ExistingFile);
  chat->add_option("--data-root", o.data_root, "restrict tool paths to this directory")->check(CLI::ExistingDirectory);
  chat->add_option("--min-area", o.min_area, "smallest kept patch")->check(CLI::NonNegativeNumber);
  chat->add_option("--kernel-radius", o.kernel_radius, "morphology radius")->check(CLI::NonNegativeNumber);
  chat->add_option("--transcript", o.transcript, "write the transcript here on exit");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  spdlog::set_level(o.verbosity >= 2 ? spdlog::level::debug
                    : o.verbosity == 1 ? spdlog::level::info
                                       : spdlog::level::warn);
  try {
    if (*eval) {
      if (o.pred_dir.empty() && o.captions.empty()) {
        throw CLI::ValidationError("eval", "give --pred-dir, --captions or both");
      }
      return cmd_eval(o, out);
    }
    if (*detect) return cmd_detect(o, out);
    if (*caption) return cmd_caption(o, out);
    if (*stats) return cmd_stats(o, out);
    if (*subset) return cmd_subset(o, out, err);
    if (*serve) return cmd_serve(o, err);
    if (*chat) return cmd_chat(o, out, err, in);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const Error& e) {
    err << fmt::format("error: {}: {}\n", to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    err << fmt::format("error: {}\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace forestchat::cli
