#pragma once

// HTTP synthesis service behind the slider UI. All state is loaded once at
// startup and read-only afterwards; every response is a pure function of the
// query string and the artifact version.

#include <httplib.h>
// <resolv.h> (pulled in by httplib) defines _res as a macro, which breaks
// Eigen headers included later in the same translation unit.
#ifdef _res
#undef _res
#endif

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "streetlatent/editing.hpp"
#include "streetlatent/error.hpp"
#include "streetlatent/io.hpp"
#include "streetlatent/latent.hpp"
#include "streetlatent/png.hpp"
#include "streetlatent/scenegen.hpp"
#include "streetlatent/semantics.hpp"

namespace streetlatent {

inline constexpr double kAlphaLimit = 3.0;

/// Generator constants as written next to the boundaries, so a service can
/// refuse artifacts produced by a different generator.
inline io::json generator_constants(std::size_t dim) {
  const auto& g = generator_for(dim);
  io::json j;
  j["dim"] = dim;
  j["param_count"] = kSceneParamCount;
  std::ostringstream seed;
  seed << "0x" << std::hex << kGeneratorSeed;
  j["seed"] = seed.str();
  j["gain"] = kGeneratorGain;
  io::json names = io::json::array(), ranges = io::json::array();
  for (const auto& f : kSceneFields) {
    names.push_back(f.name);
    ranges.push_back({f.lo, f.hi});
  }
  j["params"] = std::move(names);
  j["ranges"] = std::move(ranges);
  std::string text;
  io::json matrix = io::json::array();
  for (std::size_t r = 0; r < kSceneParamCount; ++r)
    for (std::size_t c = 0; c < dim; ++c) {
      matrix.push_back(g.weight(r, c));
      text += io::format_real(g.weight(r, c)) + "\n";
    }
  j["matrix"] = std::move(matrix);
  j["matrix_sha256"] = io::sha256(text);
  return j;
}

struct SynthesisRequest {
  std::uint64_t seed = 0;
  double psi = kDefaultPsi;
  AlphaMap alphas{{Dimension::income, 0.0}, {Dimension::education, 0.0}, {Dimension::health, 0.0}};

  /// Clamps every alpha into [-3, 3]; non-finite values become 0.
  void clamp() {
    for (auto& [d, a] : alphas) a = std::isfinite(a) ? std::clamp(a, -kAlphaLimit, kAlphaLimit) : 0.0;
  }
};

struct ServiceState {
  std::size_t dim = kDefaultLatentDim;
  ConditionedSet normals;
  io::json boundaries_json;
  std::string version;
};

inline std::filesystem::path conditioned_path(const std::filesystem::path& artifacts) {
  return artifacts / "boundaries" / "conditioned.json";
}

inline std::filesystem::path generator_path(const std::filesystem::path& artifacts) {
  return artifacts / "generator.json";
}

inline ServiceState make_service_state(const ConditionedSet& normals, std::size_t dim, std::string version) {
  ServiceState s;
  s.dim = dim;
  s.normals = normals;
  if (normals.boundaries.empty()) throw InvalidArgument("no conditioned boundaries");
  for (const auto& b : normals.boundaries)
    if (b.normal.size() != dim) throw LengthMismatch(b.normal.size(), dim);
  if (max_pairwise_dot(normals) > kOrthogonalTolerance)
    throw InvalidArgument("conditioned boundaries are not mutually orthogonal");
  s.version = std::move(version);
  s.boundaries_json = to_json(normals);
  return s;
}

/// Loads boundaries/conditioned.json and generator.json from `dir` and
/// checks the generator constants against the compiled-in generator.
inline ServiceState load_service_state(const std::filesystem::path& dir) {
  const auto cpath = conditioned_path(dir), gpath = generator_path(dir);
  if (!std::filesystem::exists(cpath)) throw IoError("conditioned boundaries not found: " + cpath.string());
  if (!std::filesystem::exists(gpath)) throw IoError("generator constants not found: " + gpath.string());
  const auto ctext = io::read_text(cpath), gtext = io::read_text(gpath);
  io::json gj, cj;
  try {
    gj = io::json::parse(gtext);
    cj = io::json::parse(ctext);
  } catch (const io::json::parse_error& e) {
    throw IoError(std::string("invalid artifact JSON: ") + e.what());
  }
  const auto dim = gj.at("dim").get<std::size_t>();
  if (gj.at("matrix_sha256") != generator_constants(dim).at("matrix_sha256"))
    throw IoError("generator constants in " + gpath.string() + " do not match this build");
  const auto set = conditioned_set_from_json(cj);
  return make_service_state(set, dim, io::sha256(gtext + ctext).substr(0, 16));
}

struct SynthesisResult {
  LatentCode base;
  LatentCode edited;
  RasterImage image;
  AlphaMap applied;
};

inline LatentCode base_latent(std::uint64_t seed, double psi, std::size_t dim) {
  return sample_latent(SamplingConfig(seed, 1, psi, dim), 0);
}

inline SynthesisResult synthesize(SynthesisRequest req, const ServiceState& state) {
  req.clamp();
  SynthesisResult r;
  r.base = base_latent(req.seed, req.psi, state.dim);
  AlphaMap used;
  for (const auto& [d, a] : req.alphas)
    if (state.normals.contains(d)) used[d] = a;
  r.edited = condition(r.base, used, state.normals);
  r.image = generate(r.edited);
  r.applied = req.alphas;
  return r;
}

inline std::string format_alphas(const AlphaMap& alphas) {
  std::string s;
  for (auto d : kAllDimensions) {
    const auto it = alphas.find(d);
    if (it == alphas.end()) continue;
    if (!s.empty()) s += ",";
    s += to_string(d) + "=" + io::format_real(it->second);
  }
  return s;
}

/// Parses query parameters; unknown keys are ignored, malformed numbers or
/// psi outside [0, 1] are errors.
inline SynthesisRequest parse_request(const httplib::Params& params) {
  SynthesisRequest req;
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    const auto it = params.find(key);
    if (it == params.end()) return std::nullopt;
    return it->second;
  };
  auto real = [](const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.empty()) throw InvalidArgument("invalid number for " + key + ": '" + v + "'");
    return x;
  };
  if (auto v = get("seed")) {
    std::size_t pos = 0;
    try {
      req.seed = std::stoull(*v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v->size() || v->empty() || (*v)[0] == '-') throw InvalidArgument("invalid seed: '" + *v + "'");
  }
  if (auto v = get("psi")) {
    req.psi = real("psi", *v);
    if (!(req.psi >= 0.0 && req.psi <= 1.0)) throw InvalidArgument("psi must lie in [0, 1]");
  }
  for (auto d : kAllDimensions)
    if (auto v = get("alpha_" + to_string(d))) req.alphas[d] = real("alpha_" + to_string(d), *v);
  req.clamp();
  return req;
}

inline io::json boundaries_response(const ServiceState& state) {
  io::json j = state.boundaries_json;
  io::json residuals = io::json::array();
  const auto& bs = state.normals.boundaries;
  for (std::size_t i = 0; i < bs.size(); ++i)
    for (std::size_t k = i + 1; k < bs.size(); ++k)
      residuals.push_back({{"a", to_string(bs[i].dimension)},
                           {"b", to_string(bs[k].dimension)},
                           {"dot", dot(bs[i].normal, bs[k].normal)}});
  j["orthogonality_residuals"] = std::move(residuals);
  j["version"] = state.version;
  return j;
}

inline void install_routes(httplib::Server& server, std::shared_ptr<const ServiceState> state) {
  auto versioned = [state](httplib::Response& res) { res.set_header("X-Artifact-Version", state->version); };
  auto bad_request = [versioned](httplib::Response& res, const std::string& message) {
    versioned(res);
    res.status = 400;
    res.set_content(io::json{{"error", message}}.dump(), "application/json");
  };

  server.Get("/api/synthesize", [=](const httplib::Request& req, httplib::Response& res) {
    SynthesisRequest sr;
    try {
      sr = parse_request(req.params);
    } catch (const InvalidArgument& e) {
      return bad_request(res, e.what());
    }
    const auto result = synthesize(sr, *state);
    const auto bytes = png::encode(result.image);
    versioned(res);
    res.set_header("X-Applied-Alphas", format_alphas(result.applied));
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  });

  server.Get("/api/boundaries", [=](const httplib::Request&, httplib::Response& res) {
    versioned(res);
    res.set_content(boundaries_response(*state).dump(), "application/json");
  });

  server.Get("/api/describe", [=](const httplib::Request& req, httplib::Response& res) {
    SynthesisRequest sr;
    try {
      sr = parse_request(req.params);
    } catch (const InvalidArgument& e) {
      return bad_request(res, e.what());
    }
    const auto z = base_latent(sr.seed, sr.psi, state->dim);
    const auto params = decode_params(z);
    io::json p;
    for (const auto& f : kSceneFields) p[f.name] = params.*(f.member);
    versioned(res);
    res.set_content(io::json{{"seed", sr.seed}, {"psi", sr.psi}, {"latent", io::to_json(z)}, {"params", p}}.dump(),
                    "application/json");
  });

  server.Get("/api/health", [=](const httplib::Request&, httplib::Response& res) {
    versioned(res);
    res.set_content(io::json{{"status", "ok"}, {"version", state->version}, {"dim", state->dim}}.dump(),
                    "application/json");
  });
}

/// Splits "host:port"; a bare port binds to 127.0.0.1.
inline std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  const std::string host = colon == std::string::npos ? "127.0.0.1" : bind.substr(0, colon);
  const std::string port = colon == std::string::npos ? bind : bind.substr(colon + 1);
  int p = -1;
  try {
    std::size_t pos = 0;
    p = std::stoi(port, &pos);
    if (pos != port.size()) p = -1;
  } catch (const std::exception&) {
  }
  if (p < 0 || p > 65535 || host.empty()) throw InvalidArgument("invalid bind address '" + bind + "'");
  return {host, p};
}

/// Blocks serving requests until the server is stopped.
inline void serve(const ServiceState& state, const std::string& bind) {
  const auto [host, port] = parse_bind(bind);
  httplib::Server server;
  install_routes(server, std::make_shared<const ServiceState>(state));
  if (!server.bind_to_port(host, port)) throw IoError("cannot bind " + bind);
  server.listen_after_bind();
}

}  // namespace streetlatent
