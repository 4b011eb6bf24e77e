// SPDX-License-Identifier: Apache-2.0
//
// vcb command-line interface. Exit codes: 0 success, 2 validation error,
// 1 backend or I/O error.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "vcb/backends.hpp"
#include "vcb/embedding_file.hpp"
#include "vcb/encoder.hpp"
#include "vcb/error.hpp"
#include "vcb/files.hpp"
#include "vcb/pipeline.hpp"
#include "vcb/service.hpp"
#include "vcb/study.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitBackend = 1;

struct BackendFlags {
  std::string backend = "mock";
  std::string config;
};

void add_backend_flags(CLI::App* cmd, BackendFlags& flags) {
  cmd->add_option("--backend", flags.backend, "mock | real")
      ->envname("VCB_BACKEND")
      ->check(CLI::IsMember({"mock", "real"}));
  cmd->add_option("--config", flags.config, "JSON file pinning backend weights and worker");
}

vcb::BackendSet backends_from(const BackendFlags& flags) {
  vcb::BackendConfig config;
  if (!flags.config.empty()) config = vcb::BackendConfig::load(flags.config);
  config.kind = flags.backend;
  return vcb::make_backends(config);
}

vcb::ImageRef load_image(const std::string& path) {
  return vcb::ImageRef::from_bytes(vcb::read_file(path));
}

struct StoreFlags {
  std::string store;
  std::string cache;

  fs::path cache_dir() const { return cache.empty() ? fs::path(store) / "cache" : fs::path(cache); }
};

void add_store_flags(CLI::App* cmd, StoreFlags& flags, const char* store_flag) {
  cmd->add_option(store_flag, flags.store, "run store directory")->envname("VCB_STORE")->required();
  cmd->add_option("--cache", flags.cache, "embedding cache directory (default <store>/cache)")
      ->envname("VCB_CACHE");
}

struct GenFlags {
  std::optional<std::uint64_t> seed;
  int steps = 30;
  double guidance = 7.5;
  int width = 512;
  int height = 512;

  vcb::GenSettings settings() const {
    vcb::GenSettings s;
    s.seed = *seed;
    s.steps = steps;
    s.guidance = guidance;
    s.width = width;
    s.height = height;
    return s;
  }
};

void add_gen_flags(CLI::App* cmd, GenFlags& flags) {
  cmd->add_option("--seed", flags.seed, "generation seed")->required();
  cmd->add_option("--steps", flags.steps, "denoising steps")->capture_default_str();
  cmd->add_option("--guidance", flags.guidance, "guidance scale")->capture_default_str();
  cmd->add_option("--width", flags.width)->capture_default_str();
  cmd->add_option("--height", flags.height)->capture_default_str();
}

struct BlendFlags {
  std::string source;
  std::string ref_a;
  std::string ref_b;
  std::string mode;
};

void add_blend_flags(CLI::App* cmd, BlendFlags& flags) {
  cmd->add_option("--source", flags.source, "source image")->required()->check(CLI::ExistingFile);
  cmd->add_option("--ref-a", flags.ref_a, "reference image A")->check(CLI::ExistingFile);
  cmd->add_option("--ref-b", flags.ref_b, "reference image B")->check(CLI::ExistingFile);
  cmd->add_option("--mode", flags.mode, "common | distinct")
      ->check(CLI::IsMember({"common", "distinct"}));
}

vcb::BlendRequest request_from(const BlendFlags& flags, const vcb::GenSettings& settings) {
  const bool baseline = flags.mode.empty() && flags.ref_a.empty() && flags.ref_b.empty();
  if (baseline) return vcb::BlendRequest::baseline(load_image(flags.source), settings);
  const std::string mode = flags.mode.empty() ? "common" : flags.mode;
  if (flags.ref_a.empty()) {
    throw vcb::Error(vcb::ErrorKind::kParameter, "--ref-a is required for " + mode + " mode");
  }
  if (flags.ref_b.empty()) {
    throw vcb::Error(vcb::ErrorKind::kParameter, "--ref-b is required for " + mode + " mode");
  }
  return vcb::BlendRequest{load_image(flags.source), load_image(flags.ref_a),
                           load_image(flags.ref_b),  vcb::parse_blend_mode(mode),
                           0.0, 0.0, settings};
}

json record_summary(const vcb::RunStore& store, const vcb::RunRecord& r) {
  return {{"run_id", r.run_id},
          {"dir", store.run_dir(r.run_id).string()},
          {"output", (store.run_dir(r.run_id) / r.output_image).string()},
          {"request_digest", r.request_digest},
          {"mask_fraction", r.mask_fraction},
          {"theta", r.theta()},
          {"d", r.d()}};
}

vcb::CategorySpec category_from(const json& j, const fs::path& base) {
  auto image = [&](const json& p) { return load_image((base / p.get<std::string>()).string()); };
  vcb::CategorySpec c;
  c.name = j.at("name").get<std::string>();
  for (const auto& s : j.at("sources")) c.sources.push_back(image(s));
  std::size_t k = 0;
  for (const auto& p : j.at("pairs")) {
    c.pairs.push_back({vcb::kPairLabels[std::min(k++, vcb::kPairsPerQuestion - 1)], image(p.at(0)),
                       image(p.at(1))});
  }
  const auto defaults = vcb::reference_category_params(c.name);
  if (!j.contains("theta") && !defaults) {
    throw vcb::Error(vcb::ErrorKind::kParameter, "category '" + c.name + "' needs theta and d");
  }
  c.theta = j.contains("theta") ? j.at("theta").get<double>() : defaults->theta;
  c.d = j.contains("d") ? j.at("d").get<double>() : defaults->d;
  return c;
}

vcb::Service* g_service = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual concept blending: embedding-space feature transfer between images"};
  app.require_subcommand(1);

  // encode
  auto* encode_cmd = app.add_subcommand("encode", "encode an image into a VCBE embedding file");
  std::string encode_input;
  std::string encode_out;
  BackendFlags encode_backend;
  encode_cmd->add_option("image", encode_input, "image file")->required()->check(CLI::ExistingFile);
  encode_cmd->add_option("--out", encode_out, "output .vcbe path")->required();
  add_backend_flags(encode_cmd, encode_backend);

  // blend
  auto* blend_cmd = app.add_subcommand("blend", "run one blend and persist a run record");
  BlendFlags blend_flags;
  GenFlags blend_gen;
  StoreFlags blend_store;
  BackendFlags blend_backend;
  double blend_theta = 0.0;
  double blend_d = 0.0;
  add_blend_flags(blend_cmd, blend_flags);
  blend_cmd->add_option("--theta", blend_theta, "reference threshold")->capture_default_str();
  blend_cmd->add_option("--depth-strength", blend_d, "depth constraint strength d")
      ->capture_default_str();
  add_gen_flags(blend_cmd, blend_gen);
  add_store_flags(blend_cmd, blend_store, "--out");
  add_backend_flags(blend_cmd, blend_backend);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "run a theta x d grid");
  BlendFlags sweep_flags;
  GenFlags sweep_gen;
  StoreFlags sweep_store;
  BackendFlags sweep_backend;
  std::vector<double> theta_list;
  std::vector<double> d_list;
  add_blend_flags(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--theta-list", theta_list, "comma-separated ascending thetas")
      ->delimiter(',')
      ->required();
  sweep_cmd->add_option("--d-list", d_list, "comma-separated ascending depth strengths")
      ->delimiter(',')
      ->required();
  add_gen_flags(sweep_cmd, sweep_gen);
  add_store_flags(sweep_cmd, sweep_store, "--out");
  add_backend_flags(sweep_cmd, sweep_backend);

  // gallery
  auto* gallery_cmd = app.add_subcommand("gallery", "rebuild and print the gallery index");
  StoreFlags gallery_store;
  add_store_flags(gallery_cmd, gallery_store, "--store");

  // study
  auto* study_cmd = app.add_subcommand("study", "build question sets and score responses");
  study_cmd->require_subcommand(1);
  auto* build_cmd = study_cmd->add_subcommand("build", "generate a question set");
  std::string study_config;
  std::string bundle_dir;
  StoreFlags study_store;
  BackendFlags study_backend;
  build_cmd->add_option("--study", study_config, "study definition JSON")
      ->required()
      ->check(CLI::ExistingFile);
  build_cmd->add_option("--out", bundle_dir, "question bundle directory")->required();
  add_store_flags(build_cmd, study_store, "--store");
  build_cmd->add_option("--backend", study_backend.backend, "mock | real")
      ->envname("VCB_BACKEND")
      ->check(CLI::IsMember({"mock", "real"}));
  build_cmd->add_option("--backend-config", study_backend.config,
                        "JSON file pinning backend weights and worker");

  auto* score_cmd = study_cmd->add_subcommand("score", "score responses against a question set");
  std::string questions_path;
  std::string responses_path;
  std::string report_prefix;
  std::string salt;
  double alpha = 0.05;
  score_cmd->add_option("--questions", questions_path, "questions.json")
      ->required()
      ->check(CLI::ExistingFile);
  score_cmd->add_option("--responses", responses_path,
                        "CSV: participant_id,question_id,chosen_index")
      ->required()
      ->check(CLI::ExistingFile);
  score_cmd->add_option("--alpha", alpha, "significance level")->capture_default_str();
  score_cmd->add_option("--salt", salt, "salt for hashing participant ids");
  score_cmd->add_option("--out", report_prefix, "write <out>.json and <out>.md");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP job service");
  std::string host = "127.0.0.1";
  int port = 8080;
  StoreFlags serve_store;
  BackendFlags serve_backend;
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();
  add_store_flags(serve_cmd, serve_store, "--store");
  add_backend_flags(serve_cmd, serve_backend);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*encode_cmd) {
      auto backends = backends_from(encode_backend);
      const vcb::ImageRef image = load_image(encode_input);
      const vcb::Embedding e = vcb::encode(*backends.encoder, image);
      vcb::write_embedding(e, encode_out, image.sha256());
      std::cout << json{{"output", encode_out}, {"encoder_id", e.encoder_id()},
                        {"source_sha256", image.sha256()}}
                       .dump()
                << "\n";
    } else if (*blend_cmd) {
      auto backends = backends_from(blend_backend);
      vcb::RunStore store(blend_store.store);
      vcb::Pipeline pipeline(backends.view(), store, blend_store.cache_dir());
      vcb::BlendRequest request = request_from(blend_flags, blend_gen.settings());
      request.theta = blend_theta;
      request.d = blend_d;
      const vcb::RunRecord record = pipeline.run_blend(request);
      vcb::write_gallery_index(store);
      std::cout << record_summary(store, record).dump() << "\n";
    } else if (*sweep_cmd) {
      auto backends = backends_from(sweep_backend);
      vcb::RunStore store(sweep_store.store);
      vcb::Pipeline pipeline(backends.view(), store, sweep_store.cache_dir());
      vcb::SweepRequest sweep{request_from(sweep_flags, sweep_gen.settings()), theta_list, d_list};
      const vcb::SweepResult result = pipeline.run_sweep(sweep);
      vcb::write_gallery_index(store);
      json runs = json::array();
      for (const auto& r : result.records) runs.push_back(record_summary(store, r));
      json failures = json::array();
      for (const auto& f : result.failures) {
        failures.push_back({{"row", f.row}, {"col", f.col}, {"error", f.error}});
      }
      std::cout << json{{"sweep_id", result.sweep_id}, {"total", result.total},
                        {"runs", runs}, {"failures", failures}}
                       .dump(2)
                << "\n";
      if (result.records.empty()) return kExitBackend;
    } else if (*gallery_cmd) {
      vcb::RunStore store(gallery_store.store);
      std::cout << vcb::gallery_to_json(vcb::write_gallery_index(store)).dump(2) << "\n";
    } else if (*build_cmd) {
      const json def = json::parse(vcb::read_text_file(study_config));
      const fs::path base = fs::path(study_config).parent_path();
      std::vector<vcb::CategorySpec> categories;
      for (const auto& c : def.at("categories")) categories.push_back(category_from(c, base));
      vcb::BuildOptions options;
      const json s = def.value("settings", json::object());
      options.settings.steps = s.value("steps", options.settings.steps);
      options.settings.guidance = s.value("guidance", options.settings.guidance);
      options.settings.width = s.value("width", options.settings.width);
      options.settings.height = s.value("height", options.settings.height);
      options.base_seed = def.value("base_seed", std::uint64_t{0});
      auto backends = backends_from(study_backend);
      vcb::RunStore store(study_store.store);
      vcb::Pipeline pipeline(backends.view(), store, study_store.cache_dir());
      const auto questions = vcb::build_question_set(categories, pipeline, options);
      vcb::write_gallery_index(store);
      vcb::export_question_bundle(questions, store.root(), bundle_dir);
      std::size_t incomplete = 0;
      for (const auto& q : questions) incomplete += q.complete ? 0 : 1;
      std::cout << json{{"questions", questions.size()}, {"incomplete", incomplete},
                        {"bundle", (fs::path(bundle_dir) / "questions.json").string()}}
                       .dump()
                << "\n";
    } else if (*score_cmd) {
      const auto questions = vcb::load_questions(questions_path);
      const auto responses =
          vcb::parse_responses_csv(vcb::read_text_file(responses_path), salt);
      const vcb::ScoreReport report = vcb::score(responses, questions);
      const std::string markdown = vcb::report_markdown(report, alpha);
      if (!report_prefix.empty()) {
        vcb::write_file_atomic(report_prefix + ".json", vcb::report_json(report, alpha).dump(2));
        vcb::write_file_atomic(report_prefix + ".md", markdown);
      }
      std::cout << markdown;
    } else if (*serve_cmd) {
      auto backends = backends_from(serve_backend);
      vcb::Service service(backends, {serve_store.store, serve_store.cache_dir()});
      g_service = &service;
      std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
      });
      spdlog::info("serving /v1 on {}:{} ({} backend)", host, port, serve_backend.backend);
      if (!service.listen(host, port)) {
        spdlog::error("cannot listen on {}:{}", host, port);
        return kExitBackend;
      }
      g_service = nullptr;
    }
  } catch (const vcb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_validation() ? kExitValidation : kExitBackend;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBackend;
  }
  return 0;
}
