#pragma once

// End-to-end pipeline: a JSON config, one function per stage, and stage
// metadata (content hashes of inputs and outputs) under <output>/meta.
// Wall-clock timings go to <output>/timing and nowhere else, so every other
// artifact is a pure function of the config.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "streetlatent/editing.hpp"
#include "streetlatent/error.hpp"
#include "streetlatent/inversion.hpp"
#include "streetlatent/io.hpp"
#include "streetlatent/latent.hpp"
#include "streetlatent/png.hpp"
#include "streetlatent/scenegen.hpp"
#include "streetlatent/semantics.hpp"
#include "streetlatent/service.hpp"
#include "streetlatent/world.hpp"

namespace streetlatent {

namespace fs = std::filesystem;

struct PipelineConfig {
  fs::path output_dir = "out";
  std::size_t dim = kDefaultLatentDim;
  std::size_t n = 2000;
  double psi = kDefaultPsi;
  double noise_sigma = 0.25;
  double target_rho = 0.3;

  struct Seeds {
    std::uint64_t world = 101;
    std::uint64_t sampling = 202;
    std::uint64_t split = 303;
    std::uint64_t occlusion = 404;
    std::uint64_t encoder = 505;
    std::uint64_t optimize = 606;
    std::uint64_t eval = 707;
    std::uint64_t grid = 808;
  } seeds;

  double occlusion_fraction = 0.05;
  CurationFitOptions curation;
  double label_fraction = kDefaultLabelFraction;
  SvmOptions svm;

  std::vector<InversionMethod> methods{InversionMethod::optimize, InversionMethod::encode,
                                       InversionMethod::encode_refined};
  OptimizeConfig optimize;
  std::size_t encoder_pairs = 2000;
  double encoder_lambda = 1e-3;
  int refine_rounds = 5;
  std::size_t eval_subset = 200;

  LatentSource boundary_source = LatentSource::hidden_true;
  std::vector<Dimension> order{Dimension::income, Dimension::education, Dimension::health};

  WalkSpec grid;
  std::uint64_t grid_base_seed = 1;
  std::size_t multi_count = 3;
  Dimension multi_dimension = Dimension::health;

  std::uint64_t walk_seed = 1;
  Dimension walk_dimension = Dimension::health;
};

inline io::json to_json(const OptimizeConfig& c) {
  return {{"steps", c.steps},
          {"step_size", c.step_size},
          {"restarts", c.restarts},
          {"fd_step", c.fd_step},
          {"descent", c.descent == Descent::gauss_newton ? "gauss_newton" : "gradient"},
          {"max_step", c.max_step},
          {"damping", c.damping},
          {"pyramid", c.pyramid},
          {"stage_steps", c.stage_steps},
          {"stage_rel_tol", c.stage_rel_tol},
          {"stall_steps", c.stall_steps},
          {"stall_rel_tol", c.stall_rel_tol},
          {"stop_loss", c.stop_loss},
          {"max_halvings", c.max_halvings}};
}

inline io::json to_json(const PipelineConfig& c) {
  auto names = [](const auto& xs) {
    io::json a = io::json::array();
    for (auto x : xs) a.push_back(to_string(x));
    return a;
  };
  io::json j;
  j["output_dir"] = c.output_dir.generic_string();
  j["dim"] = c.dim;
  j["n"] = c.n;
  j["psi"] = c.psi;
  j["world"] = {{"noise_sigma", c.noise_sigma}, {"target_rho", c.target_rho}};
  j["seeds"] = {{"world", c.seeds.world},       {"sampling", c.seeds.sampling}, {"split", c.seeds.split},
                {"occlusion", c.seeds.occlusion}, {"encoder", c.seeds.encoder},   {"optimize", c.seeds.optimize},
                {"eval", c.seeds.eval},         {"grid", c.seeds.grid}};
  j["curation"] = {{"occlusion_fraction", c.occlusion_fraction},
                   {"threshold", c.curation.threshold},
                   {"max_iter", c.curation.max_iter},
                   {"tol", c.curation.tol},
                   {"learning_rate", c.curation.learning_rate}};
  j["labels"] = {{"fraction", c.label_fraction}};
  j["svm"] = {{"C", c.svm.c}, {"tol", c.svm.tol}, {"max_iter", c.svm.max_iter}};
  j["inversion"] = {{"methods", names(c.methods)},
                    {"optimize", to_json(c.optimize)},
                    {"encoder", {{"pairs", c.encoder_pairs}, {"lambda", c.encoder_lambda}}},
                    {"refine_rounds", c.refine_rounds},
                    {"eval_subset", c.eval_subset}};
  j["boundaries"] = {{"source", to_string(c.boundary_source)}, {"order", names(c.order)}};
  j["grid"] = {{"steps", c.grid.steps},
               {"alpha_max", c.grid.alpha_max},
               {"dimensions", names(c.grid.dimensions)},
               {"base_seed", c.grid_base_seed},
               {"multi_count", c.multi_count},
               {"multi_dimension", to_string(c.multi_dimension)}};
  j["walk"] = {{"seed", c.walk_seed}, {"dimension", to_string(c.walk_dimension)}};
  return j;
}

namespace detail {

/// Every key in `patch` must already exist in `base` (with the same kind of
/// value for objects), so typos fail loudly instead of being ignored.
inline void merge_checked(io::json& base, const io::json& patch, const std::string& path) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + key + "' must be an object");
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T get_as(const io::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const io::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

}  // namespace detail

inline PipelineConfig config_from_json(const io::json& patch) {
  io::json j = to_json(PipelineConfig{});
  if (!patch.is_object()) throw ConfigError("config must be a JSON object");
  detail::merge_checked(j, patch, "");

  auto at = [&](std::initializer_list<const char*> keys) -> const io::json& {
    const io::json* cur = &j;
    for (const char* k : keys) cur = &cur->at(k);
    return *cur;
  };
  auto real = [&](std::initializer_list<const char*> keys, const char* name) {
    return detail::get_as<double>(at(keys), name);
  };
  auto u64 = [&](std::initializer_list<const char*> keys, const char* name) {
    return detail::get_as<std::uint64_t>(at(keys), name);
  };
  auto integer = [&](std::initializer_list<const char*> keys, const char* name) {
    return detail::get_as<int>(at(keys), name);
  };
  auto text = [&](std::initializer_list<const char*> keys, const char* name) {
    return detail::get_as<std::string>(at(keys), name);
  };

  PipelineConfig c;
  try {
    c.output_dir = text({"output_dir"}, "output_dir");
    c.dim = u64({"dim"}, "dim");
    c.n = u64({"n"}, "n");
    c.psi = real({"psi"}, "psi");
    c.noise_sigma = real({"world", "noise_sigma"}, "world.noise_sigma");
    c.target_rho = real({"world", "target_rho"}, "world.target_rho");
    c.seeds.world = u64({"seeds", "world"}, "seeds.world");
    c.seeds.sampling = u64({"seeds", "sampling"}, "seeds.sampling");
    c.seeds.split = u64({"seeds", "split"}, "seeds.split");
    c.seeds.occlusion = u64({"seeds", "occlusion"}, "seeds.occlusion");
    c.seeds.encoder = u64({"seeds", "encoder"}, "seeds.encoder");
    c.seeds.optimize = u64({"seeds", "optimize"}, "seeds.optimize");
    c.seeds.eval = u64({"seeds", "eval"}, "seeds.eval");
    c.seeds.grid = u64({"seeds", "grid"}, "seeds.grid");
    c.occlusion_fraction = real({"curation", "occlusion_fraction"}, "curation.occlusion_fraction");
    c.curation.threshold = real({"curation", "threshold"}, "curation.threshold");
    c.curation.max_iter = integer({"curation", "max_iter"}, "curation.max_iter");
    c.curation.tol = real({"curation", "tol"}, "curation.tol");
    c.curation.learning_rate = real({"curation", "learning_rate"}, "curation.learning_rate");
    c.label_fraction = real({"labels", "fraction"}, "labels.fraction");
    c.svm.c = real({"svm", "C"}, "svm.C");
    c.svm.tol = real({"svm", "tol"}, "svm.tol");
    c.svm.max_iter = integer({"svm", "max_iter"}, "svm.max_iter");

    c.methods.clear();
    for (const auto& m : at({"inversion", "methods"}))
      c.methods.push_back(parse_inversion_method(detail::get_as<std::string>(m, "inversion.methods")));
    const auto& o = at({"inversion", "optimize"});
    c.optimize.steps = detail::get_as<int>(o.at("steps"), "inversion.optimize.steps");
    c.optimize.step_size = detail::get_as<double>(o.at("step_size"), "inversion.optimize.step_size");
    c.optimize.restarts = detail::get_as<int>(o.at("restarts"), "inversion.optimize.restarts");
    c.optimize.fd_step = detail::get_as<double>(o.at("fd_step"), "inversion.optimize.fd_step");
    const auto descent = detail::get_as<std::string>(o.at("descent"), "inversion.optimize.descent");
    if (descent == "gauss_newton") c.optimize.descent = Descent::gauss_newton;
    else if (descent == "gradient") c.optimize.descent = Descent::gradient;
    else throw ConfigError("inversion.optimize.descent must be gauss_newton or gradient");
    c.optimize.max_step = detail::get_as<double>(o.at("max_step"), "inversion.optimize.max_step");
    c.optimize.damping = detail::get_as<double>(o.at("damping"), "inversion.optimize.damping");
    c.optimize.pyramid = detail::get_as<std::vector<int>>(o.at("pyramid"), "inversion.optimize.pyramid");
    c.optimize.stage_steps = detail::get_as<int>(o.at("stage_steps"), "inversion.optimize.stage_steps");
    c.optimize.stage_rel_tol = detail::get_as<double>(o.at("stage_rel_tol"), "inversion.optimize.stage_rel_tol");
    c.optimize.stall_steps = detail::get_as<int>(o.at("stall_steps"), "inversion.optimize.stall_steps");
    c.optimize.stall_rel_tol = detail::get_as<double>(o.at("stall_rel_tol"), "inversion.optimize.stall_rel_tol");
    c.optimize.stop_loss = detail::get_as<double>(o.at("stop_loss"), "inversion.optimize.stop_loss");
    c.optimize.max_halvings = detail::get_as<int>(o.at("max_halvings"), "inversion.optimize.max_halvings");
    c.optimize.seed = c.seeds.optimize;
    c.encoder_pairs = u64({"inversion", "encoder", "pairs"}, "inversion.encoder.pairs");
    c.encoder_lambda = real({"inversion", "encoder", "lambda"}, "inversion.encoder.lambda");
    c.refine_rounds = integer({"inversion", "refine_rounds"}, "inversion.refine_rounds");
    c.eval_subset = u64({"inversion", "eval_subset"}, "inversion.eval_subset");

    c.boundary_source = parse_latent_source(text({"boundaries", "source"}, "boundaries.source"));
    c.order.clear();
    for (const auto& d : at({"boundaries", "order"}))
      c.order.push_back(parse_dimension(detail::get_as<std::string>(d, "boundaries.order")));

    c.grid.steps = integer({"grid", "steps"}, "grid.steps");
    c.grid.alpha_max = real({"grid", "alpha_max"}, "grid.alpha_max");
    c.grid.dimensions.clear();
    for (const auto& d : at({"grid", "dimensions"}))
      c.grid.dimensions.push_back(parse_dimension(detail::get_as<std::string>(d, "grid.dimensions")));
    c.grid_base_seed = u64({"grid", "base_seed"}, "grid.base_seed");
    c.multi_count = u64({"grid", "multi_count"}, "grid.multi_count");
    c.multi_dimension = parse_dimension(text({"grid", "multi_dimension"}, "grid.multi_dimension"));
    c.walk_seed = u64({"walk", "seed"}, "walk.seed");
    c.walk_dimension = parse_dimension(text({"walk", "dimension"}, "walk.dimension"));

    SamplingConfig(c.seeds.sampling, c.n, c.psi, c.dim).validate();
    c.optimize.validate();
    c.grid.validate();
    if (c.n < 10) throw InvalidArgument("n must be at least 10");
    if (c.methods.empty()) throw InvalidArgument("inversion.methods must not be empty");
    if (c.order.size() < 2 || c.order.size() > 3) throw InvalidArgument("boundaries.order needs 2 or 3 dimensions");
    if (!(c.label_fraction > 0.0 && c.label_fraction <= 0.5)) throw InvalidArgument("labels.fraction must lie in (0, 0.5]");
    if (c.refine_rounds < 1) throw InvalidArgument("inversion.refine_rounds must be >= 1");
    if (c.multi_count < 1) throw InvalidArgument("grid.multi_count must be >= 1");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// Parses `value` as JSON when possible, otherwise as a plain string.
inline io::json parse_override_value(const std::string& value) {
  try {
    return io::json::parse(value);
  } catch (const io::json::parse_error&) {
    return value;
  }
}

/// "a.b.c=value" -> {"a": {"b": {"c": value}}}
inline io::json override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  io::json patch = parse_override_value(assignment.substr(eq + 1));
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("empty component in override key '" + key + "'");
    parts.push_back(part);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = io::json{{*it, patch}};
  return patch;
}

inline PipelineConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& sets,
                                  const std::vector<std::string>& seed_overrides) {
  io::json j = to_json(PipelineConfig{});
  if (path) {
    if (!fs::exists(*path)) throw ConfigError("config file not found: " + path->string());
    io::json file;
    try {
      file = io::json::parse(io::read_text(*path));
    } catch (const io::json::parse_error& e) {
      throw ConfigError("invalid JSON in " + path->string() + ": " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file must contain a JSON object");
    detail::merge_checked(j, file, "");
  }
  for (const auto& s : sets) detail::merge_checked(j, override_patch(s), "");
  for (const auto& s : seed_overrides) detail::merge_checked(j, override_patch("seeds." + s), "");
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Artifact layout

struct Layout {
  fs::path root;

  fs::path world() const { return root / "world"; }
  fs::path ground_truth() const { return world() / "ground_truth.json"; }
  fs::path generator() const { return generator_path(root); }
  fs::path dataset() const { return root / "dataset"; }
  fs::path manifest() const { return dataset() / "manifest.json"; }
  fs::path curated() const { return dataset() / "curated.json"; }
  fs::path curation() const { return root / "curation"; }
  fs::path inversion() const { return root / "inversion"; }
  fs::path results(InversionMethod m) const { return inversion() / (to_string(m) + ".jsonl"); }
  fs::path latents(InversionMethod m) const { return inversion() / (to_string(m) + "_latents.bin"); }
  fs::path encoder() const { return inversion() / "encoder.json"; }
  fs::path boundaries() const { return root / "boundaries"; }
  fs::path boundary(Dimension d) const { return boundaries() / (to_string(d) + ".json"); }
  fs::path conditioned() const { return conditioned_path(root); }
  fs::path evaluation() const { return root / "evaluation"; }
  fs::path comparison() const { return root / "comparison"; }
  fs::path grids() const { return root / "grids"; }
  fs::path walks() const { return root / "walks"; }
  fs::path report() const { return root / "report"; }
  fs::path meta() const { return root / "meta"; }
  fs::path timing() const { return root / "timing"; }
};

/// Path fragments excluded when comparing artifact trees across runs.
inline const std::vector<std::string> kTimingPaths{"timing/"};

inline std::map<std::string, std::string> artifact_hashes(const fs::path& root) {
  return io::tree_hashes(root, kTimingPaths);
}

// ---------------------------------------------------------------------------
// Stage helpers

inline DatasetManifest require_manifest(const Layout& l) {
  if (!fs::exists(l.manifest())) throw IoError("dataset manifest not found: " + l.manifest().string());
  return load_manifest(l.manifest());
}

inline DatasetManifest require_curated(const Layout& l) {
  require_manifest(l);
  if (!fs::exists(l.curated())) throw IoError("curated manifest not found (run curate): " + l.curated().string());
  return load_manifest(l.curated());
}

inline GroundTruthModel require_ground_truth(const Layout& l) {
  if (!fs::exists(l.ground_truth())) throw IoError("ground truth not found (run gen-world): " + l.ground_truth().string());
  return ground_truth_from_json(io::read_json(l.ground_truth()));
}

inline std::vector<InversionResult> load_results(const Layout& l, InversionMethod m, std::size_t expected) {
  const auto path = l.results(m);
  if (!fs::exists(path)) throw IoError("missing latents for source " + to_string(m) + " (run invert): " + path.string());
  std::vector<InversionResult> out;
  std::istringstream in(io::read_text(path));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(inversion_result_from_json(io::json::parse(line)));
  if (out.size() != expected)
    throw IoError(path.string() + " has " + std::to_string(out.size()) + " results, expected " + std::to_string(expected));
  return out;
}

inline std::vector<LatentCode> source_latents(const Layout& l, const DatasetManifest& m, LatentSource source) {
  if (source == LatentSource::hidden_true) return load_hidden_latents(m);
  InversionMethod method = InversionMethod::optimize;
  if (source == LatentSource::encode) method = InversionMethod::encode;
  if (source == LatentSource::encode_refined) method = InversionMethod::encode_refined;
  const auto path = l.latents(method);
  if (!fs::exists(path)) throw IoError("missing latents for source " + to_string(source) + " (run invert): " + path.string());
  auto zs = io::read_latents(path, m.dim);
  if (zs.size() != m.size()) throw IoError("latent count mismatch in " + path.string());
  return zs;
}

inline std::vector<SemanticBoundary> load_boundaries(const Layout& l, const std::vector<Dimension>& dims) {
  std::vector<SemanticBoundary> out;
  for (auto d : dims) {
    const auto path = l.boundary(d);
    if (!fs::exists(path)) throw IoError("boundary not found (run fit): " + path.string());
    out.push_back(boundary_from_json(io::read_json(path)));
  }
  return out;
}

inline ConditionedSet require_conditioned(const Layout& l) {
  if (!fs::exists(l.conditioned()))
    throw IoError("conditioned boundaries not found (run orthogonalize): " + l.conditioned().string());
  return conditioned_set_from_json(io::read_json(l.conditioned()));
}

// ---------------------------------------------------------------------------
// Stages

struct StageContext {
  const PipelineConfig& config;
  Layout layout;
  io::json params;                 // config subset recorded in the stage metadata
  std::vector<fs::path> inputs;    // files or directories hashed as inputs
  std::vector<fs::path> outputs;   // files or directories hashed as outputs
  io::json timing = io::json::object();
  std::ostream* log = &std::cerr;
};

using StageFn = std::function<void(StageContext&)>;

inline void stage_gen_world(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  ctx.params = {{"dim", c.dim}, {"seed", c.seeds.world}, {"noise_sigma", c.noise_sigma}, {"target_rho", c.target_rho}};
  const auto model = make_ground_truth(c.seeds.world, c.dim, c.target_rho, c.noise_sigma);
  io::write_json(l.ground_truth(), to_json(model));
  io::write_json(l.generator(), generator_constants(c.dim));
  ctx.outputs = {l.world(), l.generator()};
}

inline void stage_gen_dataset(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  ctx.params = {{"n", c.n},
                {"dim", c.dim},
                {"psi", c.psi},
                {"sampling_seed", c.seeds.sampling},
                {"occlusion_seed", c.seeds.occlusion},
                {"occlusion_fraction", c.occlusion_fraction}};
  ctx.inputs = {l.ground_truth()};
  const auto model = require_ground_truth(l);
  if (model.dim() != c.dim) throw ConfigError("ground truth dimension differs from config dim; rerun gen-world");
  std::error_code ec;
  fs::remove_all(l.dataset(), ec);
  BuildOptions opts{model.seed, c.occlusion_fraction, c.seeds.occlusion};
  const auto m = build_dataset(c.n, SamplingConfig(c.seeds.sampling, c.n, c.psi, c.dim), model, l.dataset(), opts);
  *ctx.log << "gen-dataset: " << m.size() << " images\n";
  ctx.outputs = {l.dataset()};
}

inline void stage_curate(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  ctx.params = {{"threshold", c.curation.threshold},
                {"max_iter", c.curation.max_iter},
                {"tol", c.curation.tol},
                {"learning_rate", c.curation.learning_rate}};
  ctx.inputs = {l.manifest()};
  const auto m = require_manifest(l);
  const auto images = load_images(m);
  // std::vector<bool> is not contiguous, so the labels live in a plain array.
  std::unique_ptr<bool[]> keep(new bool[m.size()]);
  for (std::size_t i = 0; i < m.size(); ++i) keep[i] = !m.entries[i].occluded;
  const std::span<const bool> keep_span(keep.get(), m.size());
  const auto kept_labels = std::count(keep_span.begin(), keep_span.end(), true);

  io::json summary;
  DatasetManifest curated;
  if (kept_labels == 0 || kept_labels == static_cast<long>(m.size())) {
    // Nothing to learn from a single-label corpus; every image passes.
    curated = m;
    summary["filter"] = nullptr;
  } else {
    const auto filter = fit_curation_filter(images, keep_span, c.curation);
    io::write_json(l.curation() / "filter.json", to_json(filter));
    curated = apply_filter(filter, m, images, c.curation.threshold);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < m.size(); ++i) correct += (filter.probability(images[i]) >= c.curation.threshold) == keep[i];
    summary["filter"] = "filter.json";
    summary["training_accuracy"] = static_cast<double>(correct) / static_cast<double>(m.size());
  }
  std::size_t occluded_kept = 0;
  for (const auto& e : curated.entries) occluded_kept += e.occluded;
  summary["input"] = m.size();
  summary["kept"] = curated.size();
  summary["occluded_in_input"] = m.size() - static_cast<std::size_t>(kept_labels);
  summary["occluded_kept"] = occluded_kept;
  if (curated.size() < static_cast<std::size_t>(std::ceil(10.0 / c.label_fraction)))
    throw Error("curation kept only " + std::to_string(curated.size()) + " images; too few to label");
  save_manifest(curated, l.curated());
  io::write_json(l.curation() / "summary.json", summary);
  *ctx.log << "curate: kept " << curated.size() << " of " << m.size() << "\n";
  ctx.outputs = {l.curation(), l.curated()};
}

inline Encoder build_encoder(const PipelineConfig& c) {
  return train_encoder_on_generator(c.encoder_pairs, c.seeds.encoder, c.encoder_lambda, c.dim, c.psi);
}

inline void stage_invert(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  io::json methods = io::json::array();
  for (auto m : c.methods) methods.push_back(to_string(m));
  ctx.params = {{"methods", methods},
                {"optimize", to_json(c.optimize)},
                {"optimize_seed", c.seeds.optimize},
                {"encoder_seed", c.seeds.encoder},
                {"encoder_pairs", c.encoder_pairs},
                {"encoder_lambda", c.encoder_lambda},
                {"refine_rounds", c.refine_rounds}};
  ctx.inputs = {l.curated()};
  const auto m = require_curated(l);
  const auto images = load_images(m);
  std::error_code ec;
  fs::remove_all(l.inversion(), ec);

  std::optional<Encoder> encoder;
  const bool needs_encoder = std::any_of(c.methods.begin(), c.methods.end(),
                                         [](auto x) { return x != InversionMethod::optimize; });
  if (needs_encoder) {
    const auto t0 = std::chrono::steady_clock::now();
    encoder = build_encoder(c);
    ctx.timing["encoder_training_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    io::write_json(l.encoder(), to_json(*encoder));
  }
  InversionSettings settings{c.optimize, c.refine_rounds};
  for (auto method : c.methods) {
    const auto results = invert_all(method, images, encoder ? &*encoder : nullptr, settings, m.dim);
    std::string lines;
    std::vector<LatentCode> zs;
    double elapsed = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      lines += to_json(results[i], m.entries[i].image_id).dump() + "\n";
      zs.push_back(results[i].latent);
      elapsed += results[i].elapsed;
    }
    io::write_text(l.results(method), lines);
    io::write_latents(l.latents(method), zs);
    ctx.timing[to_string(method) + "_seconds"] = elapsed;
    *ctx.log << "invert: " << to_string(method) << " done for " << results.size() << " images\n";
  }
  ctx.outputs = {l.inversion()};
}

inline std::vector<LatentCode> boundary_latents(StageContext& ctx, const DatasetManifest& m) {
  const auto& l = ctx.layout;
  auto src = ctx.config.boundary_source;
  if (src != LatentSource::hidden_true) {
    InversionMethod method = src == LatentSource::optimize ? InversionMethod::optimize
                             : src == LatentSource::encode ? InversionMethod::encode
                                                           : InversionMethod::encode_refined;
    ctx.inputs.push_back(l.latents(method));
  }
  return source_latents(l, m, src);
}

inline void stage_fit(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  ctx.params = {{"source", to_string(c.boundary_source)},
                {"fraction", c.label_fraction},
                {"split_seed", c.seeds.split},
                {"svm", to_json(c.svm)}};
  ctx.inputs = {l.curated(), l.dataset() / "hidden", l.dataset() / "ground_truth.json"};
  const auto m = require_curated(l);
  const auto latents = boundary_latents(ctx, m);
  const auto truth = ground_truth_from_json(io::read_json(m.root / m.ground_truth));
  std::error_code ec;
  fs::remove_all(l.boundaries(), ec);
  io::json alignment;
  for (auto d : kAllDimensions) {
    const auto [train, val] = label_extremes(m, d, latents, c.label_fraction, c.seeds.split);
    const auto b = fit_boundary(train, c.svm);
    auto j = to_json(b);
    j["source"] = to_string(c.boundary_source);
    j["train_size"] = train.size();
    j["validation_size"] = val.size();
    io::write_json(l.boundary(d), j);
    alignment[to_string(d)] = cosine(b.normal, truth.weight(d));
  }
  io::write_json(l.boundaries() / "planted_alignment.json", alignment);
  ctx.outputs = {l.boundaries()};
}

inline void stage_orthogonalize(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  io::json order = io::json::array();
  for (auto d : c.order) order.push_back(to_string(d));
  ctx.params = {{"order", order}};
  for (auto d : c.order) ctx.inputs.push_back(l.boundary(d));
  const auto set = orthogonalize_set(load_boundaries(l, c.order));
  io::write_json(l.conditioned(), to_json(set, c.svm));
  ctx.outputs = {l.conditioned()};
}

inline void stage_evaluate(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  ctx.params = {{"source", to_string(c.boundary_source)}, {"fraction", c.label_fraction}, {"split_seed", c.seeds.split}};
  ctx.inputs = {l.curated(), l.boundaries()};
  const auto m = require_curated(l);
  const auto latents = boundary_latents(ctx, m);
  const auto boundaries = load_boundaries(l, {kAllDimensions.begin(), kAllDimensions.end()});
  const auto alignment = io::read_json(l.boundaries() / "planted_alignment.json");
  io::json out;
  out["source"] = to_string(c.boundary_source);
  std::string csv = "dimension,latent_source,precision,recall,f1\n";
  for (const auto& b : boundaries) {
    const auto [train, val] = label_extremes(m, b.dimension, latents, c.label_fraction, c.seeds.split);
    const auto metrics = evaluate(b, val);
    auto j = to_json(metrics);
    j["validation_size"] = val.size();
    j["planted_cosine"] = alignment.at(to_string(b.dimension));
    out["dimensions"][to_string(b.dimension)] = j;
    std::ostringstream row;
    row << std::fixed << std::setprecision(6) << to_string(b.dimension) << "," << to_string(c.boundary_source) << ","
        << metrics.precision << "," << metrics.recall << "," << metrics.f1 << "\n";
    csv += row.str();
  }
  io::write_json(l.evaluation() / "metrics.json", out);
  io::write_text(l.evaluation() / "metrics.csv", csv);
  ctx.outputs = {l.evaluation()};
}

inline constexpr std::size_t kReconstructionRows = 6;

inline void stage_compare(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  io::json methods = io::json::array();
  for (auto x : c.methods) methods.push_back(to_string(x));
  ctx.params = {{"methods", methods},
                {"eval_subset", c.eval_subset},
                {"eval_seed", c.seeds.eval},
                {"split_seed", c.seeds.split},
                {"fraction", c.label_fraction},
                {"svm", to_json(c.svm)}};
  ctx.inputs = {l.curated(), l.inversion()};
  const auto m = require_curated(l);
  const auto images = load_images(m);
  const auto hidden = load_hidden_latents(m);
  std::vector<std::pair<InversionMethod, std::vector<InversionResult>>> pre;
  for (auto method : c.methods) pre.emplace_back(method, load_results(l, method, m.size()));
  ComparisonOptions opts;
  opts.inversion = {c.optimize, c.refine_rounds};
  opts.label_fraction = c.label_fraction;
  opts.svm = c.svm;
  opts.split_seed = c.seeds.split;
  opts.eval_seed = c.seeds.eval;
  const auto report = compare_methods(m, images, hidden, c.methods, c.eval_subset, nullptr, opts, pre);
  io::write_json(l.comparison() / "comparison.json", to_json(report, false));
  io::write_text(l.comparison() / "table.txt", format_table(report));
  io::write_text(l.comparison() / "metrics.csv", metrics_csv(report.rows));

  // Side-by-side montage: one row per evaluated image, target first, then
  // each method's reconstruction.
  const auto subset = eval_subset(m.size(), std::min<std::size_t>(c.eval_subset, kReconstructionRows), c.seeds.eval);
  std::vector<RasterImage> cells;
  io::json rows = io::json::array();
  for (auto i : subset) {
    cells.push_back(images[i]);
    for (const auto& [method, results] : pre) cells.push_back(generate(results[i].latent));
    rows.push_back(m.entries[i].image_id);
  }
  if (!subset.empty()) {
    const auto montage = detail::compose(cells, static_cast<int>(subset.size()), static_cast<int>(pre.size() + 1));
    png::write_file(l.comparison() / "reconstructions.png", png::encode(montage));
    io::json columns = io::json::array({"target"});
    for (const auto& [method, results] : pre) columns.push_back(to_string(method));
    io::write_json(l.comparison() / "reconstructions.json", {{"rows", rows}, {"columns", columns}});
  }
  ctx.outputs = {l.comparison()};
}

inline void stage_grid(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  io::json dims = io::json::array();
  for (auto d : c.grid.dimensions) dims.push_back(to_string(d));
  ctx.params = {{"steps", c.grid.steps},         {"alpha_max", c.grid.alpha_max},
                {"dimensions", dims},            {"base_seed", c.grid_base_seed},
                {"grid_seed", c.seeds.grid},     {"multi_count", c.multi_count},
                {"multi_dimension", to_string(c.multi_dimension)}, {"psi", c.psi}};
  ctx.inputs = {l.conditioned()};
  const auto set = require_conditioned(l);
  std::error_code ec;
  fs::remove_all(l.grids(), ec);
  auto single = render_matrix_single_image(base_latent(c.grid_base_seed, c.psi, c.dim), set, c.grid);
  write_grid(single, l.grids() / "single");
  WalkSpec multi_spec = c.grid;
  multi_spec.dimensions = {c.multi_dimension};
  auto multi = render_matrix_multi_image(sample_latents(SamplingConfig(c.seeds.grid, c.multi_count, c.psi, c.dim)),
                                         c.multi_dimension, set, multi_spec);
  write_grid(multi, l.grids() / "multi");
  ctx.outputs = {l.grids()};
}

inline fs::path walk_dir(const Layout& l, Dimension d, std::uint64_t seed) {
  return l.walks() / (to_string(d) + "_seed" + std::to_string(seed));
}

inline void stage_walk(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto& l = ctx.layout;
  ctx.params = {{"seed", c.walk_seed},
                {"dimension", to_string(c.walk_dimension)},
                {"steps", c.grid.steps},
                {"alpha_max", c.grid.alpha_max},
                {"psi", c.psi}};
  ctx.inputs = {l.conditioned()};
  const auto set = require_conditioned(l);
  WalkSpec spec = c.grid;
  spec.dimensions = {c.walk_dimension};
  auto strip = render_matrix_single_image(base_latent(c.walk_seed, c.psi, c.dim), set, spec);
  strip.manifest.mode = "walk";
  const auto dir = walk_dir(l, c.walk_dimension, c.walk_seed);
  write_grid(strip, dir);
  ctx.outputs = {dir};
}

inline void stage_report(StageContext& ctx) {
  const auto& l = ctx.layout;
  ctx.params = io::json::object();
  ctx.inputs = {l.evaluation(), l.comparison(), l.conditioned(), l.curation() / "summary.json"};
  for (const auto& p : {l.evaluation() / "metrics.json", l.comparison() / "comparison.json", l.conditioned()})
    if (!fs::exists(p)) throw IoError("report input not found: " + p.string());
  const auto eval = io::read_json(l.evaluation() / "metrics.json");
  const auto comparison = io::read_json(l.comparison() / "comparison.json");
  const auto conditioned = io::read_json(l.conditioned());

  io::write_text(l.report() / "metrics.csv", io::read_text(l.comparison() / "metrics.csv"));

  std::ostringstream md;
  md << std::setprecision(4);
  md << "# Pipeline report\n\n";
  md << "## Boundaries (" << eval.at("source").get<std::string>() << " latents)\n\n";
  md << "| dimension | planted cosine | precision | recall | F1 |\n|---|---|---|---|---|\n";
  for (const auto& [d, v] : eval.at("dimensions").items())
    md << "| " << d << " | " << v.at("planted_cosine").get<double>() << " | " << v.at("precision").get<double>()
       << " | " << v.at("recall").get<double>() << " | " << v.at("f1").get<double>() << " |\n";
  md << "\nConditioning order:";
  for (const auto& d : conditioned.at("order")) md << " " << d.get<std::string>();
  md << "; max pairwise |dot| = " << conditioned.at("max_pairwise_dot").get<double>() << "\n\n";
  md << "## Inversion methods\n\n";
  md << "| dimension | inversion | precision | recall | F1 |\n|---|---|---|---|---|\n";
  for (const auto& row : comparison.at("table"))
    md << "| " << row.at("dimension").get<std::string>() << " | " << row.at("inversion_method").get<std::string>()
       << " | " << row.at("precision").get<double>() << " | " << row.at("recall").get<double>() << " | "
       << row.at("f1").get<double>() << " |\n";
  md << "\n| inversion | mean MSE | median MSE | share MSE <= 1e-3 | monotone traces | median cos(z, z_hat) |\n";
  md << "|---|---|---|---|---|---|\n";
  for (const auto& [m, s] : comparison.at("reconstruction").items())
    md << "| " << m << " | " << s.at("mean_mse").get<double>() << " | " << s.at("median_mse").get<double>() << " | "
       << s.at("fraction_mse_le_1e-3").get<double>() << " | " << s.at("monotone_fraction").get<double>() << " | "
       << s.at("median_cosine").get<double>() << " |\n";
  if (fs::exists(l.curation() / "summary.json")) {
    const auto cur = io::read_json(l.curation() / "summary.json");
    md << "\nCuration kept " << cur.at("kept").get<std::size_t>() << " of " << cur.at("input").get<std::size_t>()
       << " images (" << cur.at("occluded_kept").get<std::size_t>() << " occluded images survived).\n";
  }
  io::write_text(l.report() / "summary.md", md.str());
  ctx.outputs = {l.report()};
}

inline const std::vector<std::pair<std::string, StageFn>>& stages() {
  static const std::vector<std::pair<std::string, StageFn>> table{
      {"gen-world", stage_gen_world},       {"gen-dataset", stage_gen_dataset},
      {"curate", stage_curate},             {"invert", stage_invert},
      {"fit", stage_fit},                   {"orthogonalize", stage_orthogonalize},
      {"evaluate", stage_evaluate},         {"compare-inversions", stage_compare},
      {"grid", stage_grid},                 {"walk", stage_walk},
      {"report", stage_report}};
  return table;
}

inline io::json hash_paths(const Layout& l, const std::vector<fs::path>& paths) {
  io::json out = io::json::object();
  for (const auto& p : paths) {
    const auto rel = fs::relative(p, l.root).generic_string();
    if (!fs::exists(p)) {
      out[rel] = nullptr;
    } else if (fs::is_directory(p)) {
      for (const auto& [k, v] : io::tree_hashes(p)) out[rel + "/" + k] = v;
    } else {
      out[rel] = io::sha256_file(p);
    }
  }
  return out;
}

/// Runs one stage and writes meta/<stage>.json (config subset plus input
/// and output hashes) and timing/<stage>.json.
inline void run_stage(const std::string& name, const PipelineConfig& config, std::ostream& log = std::cerr) {
  const auto it = std::find_if(stages().begin(), stages().end(), [&](const auto& s) { return s.first == name; });
  if (it == stages().end()) throw ConfigError("unknown stage '" + name + "'");
  StageContext ctx{config, Layout{config.output_dir}, {}, {}, {}, io::json::object(), &log};
  const auto t0 = std::chrono::steady_clock::now();
  it->second(ctx);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  io::json meta;
  meta["stage"] = name;
  meta["params"] = ctx.params;
  meta["inputs"] = hash_paths(ctx.layout, ctx.inputs);
  meta["outputs"] = hash_paths(ctx.layout, ctx.outputs);
  io::write_json(ctx.layout.meta() / (name + ".json"), meta);
  ctx.timing["stage_seconds"] = seconds;
  io::write_json(ctx.layout.timing() / (name + ".json"), ctx.timing);
}

inline void run_all(const PipelineConfig& config, std::ostream& log = std::cerr) {
  for (const auto& [name, fn] : stages()) {
    log << "== " << name << "\n";
    run_stage(name, config, log);
  }
}

}  // namespace streetlatent
