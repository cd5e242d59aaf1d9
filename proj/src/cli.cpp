#include "hdi/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <random>
#include <sstream>

#include "hdi/boundary_recovery.hpp"
#include "hdi/cgo.hpp"
#include "hdi/config.hpp"
#include "hdi/expr.hpp"
#include "hdi/spectral_inverse.hpp"

namespace hdi {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliError {
  int code;
  std::string message;
};

// wraps a stage so unexpected exceptions map to the right exit code
template <class F>
auto stage(int code, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError{code, e.what()};
  }
}

struct Context {
  Config cfg;
  fs::path out;
  std::string digest;   // of the config text
  long long seed = 0;
  bool verbose = false;

  void log(const std::string& msg) const {
    if (verbose) std::cerr << "[hdi] " << msg << "\n";
  }
};

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

void write_json(const Context& ctx, const std::string& name, json j) {
  j["config_digest"] = ctx.digest;
  j["seed"] = ctx.seed;
  write_text(ctx.out / name, j.dump(2) + "\n");
}

Mesh mesh_from_config(const Config& cfg) {
  std::string shape = cfg.str_or("domain", "shape", "box");
  if (shape == "disk") return build_disk_mesh(cfg.integer("domain", "divisions"));
  if (shape != "box") throw std::invalid_argument("domain.shape must be box or disk");
  std::vector<double> lengths = cfg.numbers("domain", "lengths");
  std::vector<double> divs = cfg.numbers("domain", "divisions");
  if (lengths.size() != divs.size() || lengths.empty() || lengths.size() > 3)
    throw std::invalid_argument("domain.lengths and domain.divisions must match (dim 1..3)");
  std::vector<int> divisions;
  for (double d : divs) divisions.push_back(static_cast<int>(d));
  return build_box_mesh(static_cast<int>(lengths.size()), lengths, divisions);
}

ScalarField field_from_expr(const Mesh& m, const std::string& text) {
  Expression e = Expression::parse(text);
  return ScalarField::sample(m, [e](const Eigen::Vector3d& x) { return e.eval(x); });
}

BoundaryTrace trace_from_expr(const Mesh& m, const std::string& text) {
  Expression e = Expression::parse(text);
  return BoundaryTrace::sample(m, [e](const Eigen::Vector3d& x) { return e.eval(x); });
}

ScalarField coefficient(const Config& cfg, const Mesh& m, const std::string& key,
                        const char* what) {
  ScalarField f = field_from_expr(m, cfg.str_or("coefficients", key, "1"));
  f.require_positive(1e-12, what);  // rejected before any solve
  return f;
}

TensorField tensor_from_config(const Config& cfg, const Mesh& m) {
  static const char* keys2[] = {"a11", "a12", "a22"};
  static const char* keys3[] = {"a11", "a12", "a13", "a22", "a23", "a33"};
  bool given = false;
  for (const char* k : (m.dim == 2 ? std::vector<const char*>(keys2, keys2 + 3)
                                   : std::vector<const char*>(keys3, keys3 + 6)))
    if (cfg.has("coefficients", k)) given = true;
  if (!given) return TensorField::identity(m);
  auto entry = [&](const char* k, bool diag) {
    return Expression::parse(cfg.str_or("coefficients", k, diag ? "1" : "0"));
  };
  if (m.dim == 2) {
    Expression e11 = entry("a11", true), e12 = entry("a12", false), e22 = entry("a22", true);
    TensorField A = TensorField::sample(m, [&](const Eigen::Vector3d& x) {
      Eigen::Matrix2d a;
      a << e11.eval(x), e12.eval(x), e12.eval(x), e22.eval(x);
      return Eigen::MatrixXd(a);
    });
    A.require_elliptic(1e-10);
    return A;
  }
  Expression e11 = entry("a11", true), e12 = entry("a12", false), e13 = entry("a13", false),
             e22 = entry("a22", true), e23 = entry("a23", false), e33 = entry("a33", true);
  TensorField A = TensorField::sample(m, [&](const Eigen::Vector3d& x) {
    Eigen::Matrix3d a;
    a << e11.eval(x), e12.eval(x), e13.eval(x), e12.eval(x), e22.eval(x), e23.eval(x),
        e13.eval(x), e23.eval(x), e33.eval(x);
    return Eigen::MatrixXd(a);
  });
  A.require_elliptic(1e-10);
  return A;
}

SourceEnvelope envelope_from_config(const Config& cfg) {
  std::string kind = cfg.str_or("source", "envelope", "ramp");
  if (kind == "ramp") return SourceEnvelope::ramp();
  if (kind == "pulse") return SourceEnvelope::pulse(cfg.number("source", "epsilon"));
  if (kind == "impulse") return SourceEnvelope::impulse();
  throw std::invalid_argument("source.envelope must be ramp, pulse, or impulse");
}

// ---- artifact formats ------------------------------------------------------

std::string field_csv(const Context& ctx, const ScalarField& f) {
  const Mesh& m = *f.mesh;
  std::ostringstream out;
  out << "# config_digest=" << ctx.digest << "\n";
  out << "node_id,x,y" << (m.dim == 3 ? ",z" : "") << ",value\n";
  for (int i = 0; i < m.node_count(); ++i) {
    out << i;
    for (int d = 0; d < m.dim; ++d) out << "," << format_g17(m.nodes(i, d));
    out << "," << format_g17(f.values[i]) << "\n";
  }
  return out.str();
}

std::string flux_trace_csv(const Context& ctx, const FluxTrace& trace) {
  const Mesh& m = *trace.mesh;
  std::ostringstream out;
  out << "# config_digest=" << ctx.digest << "\n";
  out << "t,node_id,flux\n";
  for (int t = 0; t < trace.sample_count(); ++t)
    for (int b = 0; b < m.boundary_count(); ++b)
      out << format_g17(trace.times[t]) << "," << m.boundary_nodes[b] << ","
          << format_g17(trace.values(b, t)) << "\n";
  return out.str();
}

FluxTrace read_flux_trace(const fs::path& path, const Mesh& m) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing measurement trace " + path.string());
  std::string line;
  std::vector<double> times;
  std::vector<double> flat;  // values in (time, node) row order
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line[0] == 't') continue;
    size_t c1 = line.find(','), c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::runtime_error("malformed trace row in " + path.string());
    double t = std::strtod(line.c_str(), nullptr);
    double v = std::strtod(line.c_str() + c2 + 1, nullptr);
    if (times.empty() || t != times.back()) times.push_back(t);
    flat.push_back(v);
  }
  int nb = m.boundary_count(), nt = static_cast<int>(times.size());
  if (nt == 0 || flat.size() != static_cast<size_t>(nb) * nt)
    throw std::runtime_error("trace shape mismatch in " + path.string());
  FluxTrace trace;
  trace.mesh = &m;
  trace.times = Eigen::Map<Eigen::VectorXd>(times.data(), nt);
  trace.values.resize(nb, nt);
  for (int t = 0; t < nt; ++t)
    for (int b = 0; b < nb; ++b) trace.values(b, t) = flat[static_cast<size_t>(t) * nb + b];
  trace.source = path.filename().string();
  return trace;
}

std::string vector_key(const Eigen::VectorXd& v) {
  std::string s;
  for (int i = 0; i < v.size(); ++i) {
    s += format_g17(v[i]);
    s += ',';
  }
  return s;
}

std::string trace_key(const std::string& kind, const Eigen::VectorXd& primary,
                      const Eigen::VectorXd& secondary, const SourceEnvelope& env,
                      double t_end, double dt) {
  std::string s = kind + "|" + env.describe() + "|" + format_g17(t_end) + "|" +
                  format_g17(dt) + "|" + vector_key(primary);
  if (secondary.size()) s += "|" + vector_key(secondary);
  return digest_hex(s);
}

// ---- parametrization models for reconstruct --------------------------------

std::function<ScalarField(const Eigen::VectorXd&)> model_factory(const std::string& name,
                                                                 const Mesh& m) {
  if (name == "const")
    return [&m](const Eigen::VectorXd& p) {
      if (p.size() != 1) throw std::invalid_argument("const model takes 1 parameter");
      ScalarField f(m, p[0]);
      f.require_positive(1e-10, "model iterate");
      return f;
    };
  if (name == "affine")
    return [&m](const Eigen::VectorXd& p) {
      if (p.size() != m.dim + 1) throw std::invalid_argument("affine model takes dim+1 parameters");
      ScalarField f = ScalarField::sample(m, [&](const Eigen::Vector3d& x) {
        double v = p[0];
        for (int d = 0; d < m.dim; ++d) v += p[d + 1] * x[d];
        return v;
      });
      f.require_positive(1e-10, "model iterate");
      return f;
    };
  if (name == "bump")
    return [&m](const Eigen::VectorXd& p) {
      if (p.size() != 4) throw std::invalid_argument("bump model takes 4 parameters");
      ScalarField f = ScalarField::sample(m, [&](const Eigen::Vector3d& x) {
        double dx = x[0] - 0.5 - p[2], dy = x[1] - 0.5 - p[3];
        double s2 = (dx * dx + dy * dy) / (0.35 * 0.35);
        return p[0] + (s2 < 1.0 ? p[1] * std::exp(-1.0 / (1.0 - s2)) : 0.0);
      });
      f.require_positive(1e-10, "model iterate");
      return f;
    };
  throw std::invalid_argument("unknown model '" + name + "' (const, affine, bump)");
}

// ---- subcommands ------------------------------------------------------------

void run_forward(const Context& ctx) {
  struct Setup {
    Mesh mesh;
    ScalarField gamma, kappa;
    TensorField A;
    BoundaryTrace h;
    SourceEnvelope env = SourceEnvelope::ramp();
    double t_end = 0, dt = 0;
  };
  auto sp = std::make_shared<Setup>();
  Setup& s = *sp;  // fields hold pointers into s.mesh, so s must stay put
  stage(2, [&] {
    s.mesh = mesh_from_config(ctx.cfg);
    s.gamma = coefficient(ctx.cfg, s.mesh, "gamma", "gamma");
    s.kappa = coefficient(ctx.cfg, s.mesh, "kappa", "kappa");
    s.A = tensor_from_config(ctx.cfg, s.mesh);
    s.h = trace_from_expr(s.mesh, ctx.cfg.str("source", "h"));
    s.env = envelope_from_config(ctx.cfg);
    s.t_end = ctx.cfg.number("time", "t_end");
    s.dt = ctx.cfg.number("time", "dt");
    if (s.t_end <= 0 || s.dt <= 0) throw std::invalid_argument("time grid must be positive");
    return 0;
  });

  stage(3, [&] {
    ctx.log("forward: conductivity solve");
    ScalarField u = solve_conductivity(s.gamma, s.h);
    write_text(ctx.out / "potential.csv", field_csv(ctx, u));

    ctx.log("forward: heat evolution");
    FluxTrace flux = sigma_map(s.gamma, s.kappa, s.A, s.h, s.env, s.t_end, s.dt);
    write_text(ctx.out / "flux.csv", flux_trace_csv(ctx, flux));

    json summary;
    summary["envelope"] = s.env.describe();
    summary["t_end"] = s.t_end;
    summary["dt"] = s.dt;
    Eigen::VectorXd total = flux.total_flux();
    std::vector<std::vector<double>> series;
    for (int t = 0; t < flux.sample_count(); ++t)
      series.push_back({flux.times[t], total[t]});
    summary["total_flux"] = series;
    write_json(ctx, "summary.json", summary);
  });
}

void run_measure(const Context& ctx) {
  struct Setup {
    Mesh mesh;
    ScalarField gamma, kappa;
    TensorField A;
    std::string mode;
    double ramp_t_end = 0, ramp_dt = 0, pulse_epsilon = 0, heat_t_end = 0, heat_dt = 0;
    std::vector<std::string> xi_exprs;
  };
  auto sp = std::make_shared<Setup>();
  Setup& s = *sp;
  stage(2, [&] {
    s.mesh = mesh_from_config(ctx.cfg);
    s.gamma = coefficient(ctx.cfg, s.mesh, "gamma", "gamma");
    s.kappa = coefficient(ctx.cfg, s.mesh, "kappa", "kappa");
    s.A = tensor_from_config(ctx.cfg, s.mesh);
    s.mode = ctx.cfg.str_or("measure", "mode", "sigma");
    if (s.mode != "sigma" && s.mode != "xi")
      throw std::invalid_argument("measure.mode must be sigma or xi");
    s.ramp_t_end = ctx.cfg.number_or("measure", "ramp_t_end", 4.0);
    s.ramp_dt = ctx.cfg.number_or("measure", "ramp_dt", 1e-2);
    s.pulse_epsilon = ctx.cfg.number_or("measure", "pulse_epsilon", 1e-3);
    s.heat_t_end = ctx.cfg.number_or("measure", "heat_t_end", 1.0);
    s.heat_dt = ctx.cfg.number_or("measure", "heat_dt", 2e-3);
    if (s.mode == "xi") s.xi_exprs = ctx.cfg.strings("measure", "xi_sources");
    return 0;
  });

  stage(3, [&] {
    json manifest;
    manifest["mode"] = s.mode;
    manifest["domain"]["shape"] = ctx.cfg.str_or("domain", "shape", "box");
    manifest["domain"]["lengths"] = ctx.cfg.numbers("domain", "lengths");
    manifest["domain"]["divisions"] = ctx.cfg.numbers("domain", "divisions");
    manifest["ramp_t_end"] = s.ramp_t_end;
    manifest["ramp_dt"] = s.ramp_dt;
    manifest["pulse_epsilon"] = s.pulse_epsilon;
    manifest["heat_t_end"] = s.heat_t_end;
    manifest["heat_dt"] = s.heat_dt;
    json entries = json::array();

    auto record = [&](const std::string& kind, const std::string& key, const FluxTrace& trace) {
      std::string file = "trace_" + key + ".csv";
      write_text(ctx.out / file, flux_trace_csv(ctx, trace));
      entries.push_back({{"kind", kind}, {"key", key}, {"file", file}});
      ctx.log("measure: recorded " + kind + " trace " + key);
    };

    if (s.mode == "sigma") {
      std::vector<BoundaryTrace> probes = pipeline_voltage_probes(s.mesh);
      // the equilibrium extraction drives the exact ramp request set
      ProbeMeasure ramp = [&](const BoundaryTrace& h) {
        SourceEnvelope env = SourceEnvelope::ramp();
        FluxTrace trace = sigma_map(s.gamma, s.kappa, s.A, h, env, s.ramp_t_end, s.ramp_dt);
        record("ramp", trace_key("ramp", h.values, {}, env, s.ramp_t_end, s.ramp_dt), trace);
        return trace;
      };
      extract_dtn_form(ramp, probes);

      SourceEnvelope pulse = SourceEnvelope::pulse(s.pulse_epsilon);
      for (auto [i, j] : pipeline_pulse_pairs()) {
        FluxTrace trace = sigma_map_polarized(s.gamma, s.kappa, s.A, probes[i], probes[j],
                                              pulse, s.heat_t_end, s.heat_dt);
        record("pulse",
               trace_key("pulse", probes[i].values, probes[j].values, pulse, s.heat_t_end,
                         s.heat_dt),
               trace);
      }
    } else {
      SourceEnvelope pulse = SourceEnvelope::pulse(s.pulse_epsilon);
      manifest["xi_sources"] = s.xi_exprs;
      for (const std::string& expr : s.xi_exprs) {
        ScalarField F = field_from_expr(s.mesh, expr);
        FluxTrace trace = xi_map(s.kappa, s.A, F, pulse, s.heat_t_end, s.heat_dt);
        record("xi", trace_key("xi", F.values, {}, pulse, s.heat_t_end, s.heat_dt), trace);
      }
    }
    manifest["traces"] = entries;
    write_json(ctx, "manifest.json", manifest);

    // provenance only; reconstruct never opens this file
    json truth;
    truth["gamma"] = ctx.cfg.str_or("coefficients", "gamma", "1");
    truth["kappa"] = ctx.cfg.str_or("coefficients", "kappa", "1");
    write_json(ctx, "truth.json", truth);
  });
}

void run_spectrum(const Context& ctx) {
  struct Setup {
    Mesh mesh;
    ScalarField kappa;
    TensorField A;
    int count = 0;
  };
  auto sp = std::make_shared<Setup>();
  Setup& s = *sp;
  stage(2, [&] {
    s.mesh = mesh_from_config(ctx.cfg);
    s.kappa = coefficient(ctx.cfg, s.mesh, "kappa", "kappa");
    s.A = tensor_from_config(ctx.cfg, s.mesh);
    s.count = ctx.cfg.integer_or("spectrum", "count", 12);
    if (s.count < 1) throw std::invalid_argument("spectrum.count must be positive");
    return 0;
  });
  stage(3, [&] {
    SpectralData sd = dirichlet_spectrum(OperatorP(s.kappa, s.A), s.count);
    json j;
    j["eigenvalues"] = std::vector<double>(sd.eigenvalues.data(),
                                           sd.eigenvalues.data() + sd.eigenvalues.size());
    j["multiplicities"] = sd.multiplicities;
    j["cluster_values"] = sd.cluster_values;
    j["residuals"] = std::vector<double>(sd.residuals.data(),
                                         sd.residuals.data() + sd.residuals.size());
    j["boundary_nodes"] = s.mesh.boundary_nodes;
    std::vector<std::vector<double>> fluxes;
    for (int k = 0; k < sd.count(); ++k) {
      Eigen::VectorXd col = sd.flux_traces.col(k);
      fluxes.emplace_back(col.data(), col.data() + col.size());
    }
    j["flux_traces"] = fluxes;
    write_json(ctx, "spectrum.json", j);
  });
}

void run_reconstruct(const Context& ctx) {
  struct Setup {
    fs::path data;
    json manifest;
    Mesh mesh;
    std::map<std::string, std::string> files;  // trace key -> file name
    PipelineConfig pipe;
    std::string manifest_bytes;
  };
  auto s = std::make_shared<Setup>();
  stage(2, [&] {
    s->data = ctx.cfg.str("reconstruct", "data");
    std::ifstream in(s->data / "manifest.json", std::ios::binary);
    if (!in) throw std::invalid_argument("no manifest.json in " + s->data.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    s->manifest_bytes = buf.str();
    s->manifest = json::parse(s->manifest_bytes);

    std::vector<double> lengths = s->manifest["domain"]["lengths"].get<std::vector<double>>();
    std::vector<int> divisions;
    for (double d : s->manifest["domain"]["divisions"].get<std::vector<double>>())
      divisions.push_back(static_cast<int>(d));
    if (s->manifest["domain"]["shape"] != "box")
      throw std::invalid_argument("reconstruct supports box measurement domains");
    s->mesh = build_box_mesh(static_cast<int>(lengths.size()), lengths, divisions);

    for (const json& e : s->manifest["traces"])
      s->files[e["key"].get<std::string>()] = e["file"].get<std::string>();

    PipelineConfig& p = s->pipe;
    p.mesh = &s->mesh;
    p.ramp_t_end = s->manifest["ramp_t_end"].get<double>();
    p.ramp_dt = s->manifest["ramp_dt"].get<double>();
    p.pulse_epsilon = s->manifest["pulse_epsilon"].get<double>();
    p.heat_t_end = s->manifest["heat_t_end"].get<double>();
    p.heat_dt = s->manifest["heat_dt"].get<double>();
    p.mode_budget = ctx.cfg.integer_or("reconstruct", "mode_budget", 6);
    p.series_modes = ctx.cfg.integer_or("reconstruct", "series_modes", 200);

    auto initial = [&](const std::string& key) {
      std::vector<double> v = ctx.cfg.numbers("reconstruct", key);
      return Eigen::Map<Eigen::VectorXd>(v.data(), v.size()).eval();
    };
    if (s->manifest["mode"] == "sigma") {
      p.gamma_parametrize = model_factory(ctx.cfg.str("reconstruct", "gamma_model"), s->mesh);
      p.gamma_initial = initial("gamma_initial");
    }
    p.kappa_parametrize = model_factory(ctx.cfg.str("reconstruct", "kappa_model"), s->mesh);
    p.kappa_initial = initial("kappa_initial");
    return 0;
  });

  PipelineReport rep = stage(4, [&] {
    auto lookup = [s](const std::string& key) {
      auto it = s->files.find(key);
      if (it == s->files.end())
        throw std::runtime_error("measurement set lacks trace " + key);
      return read_flux_trace(s->data / it->second, s->mesh);
    };
    if (s->manifest["mode"] == "sigma") {
      s->pipe.sigma = [s, lookup](const BoundaryTrace& h, const SourceEnvelope& env,
                                  double t_end, double dt) {
        return lookup(trace_key("ramp", h.values, {}, env, t_end, dt));
      };
      s->pipe.sigma_polarized = [s, lookup](const BoundaryTrace& h, const BoundaryTrace& ht,
                                            const SourceEnvelope& env, double t_end, double dt) {
        return lookup(trace_key("pulse", h.values, ht.values, env, t_end, dt));
      };
    } else {
      s->pipe.xi = [s, lookup](const ScalarField& F, const SourceEnvelope& env, double t_end,
                               double dt) {
        return lookup(trace_key("xi", F.values, {}, env, t_end, dt));
      };
      for (const std::string& expr : s->manifest["xi_sources"].get<std::vector<std::string>>())
        s->pipe.xi_sources.push_back(field_from_expr(s->mesh, expr));
    }
    PipelineReport rep = full_pipeline(s->pipe);
    if (!rep.ok) throw CliError{4, "identification pipeline aborted: " +
                                       (rep.stages.empty() ? "?" : rep.stages.back())};
    return rep;
  });

  json report = json::parse(rep.to_json());
  report["inputs_digest"] = digest_hex(s->manifest_bytes);
  write_json(ctx, "report.json", report);
  write_text(ctx.out / "kappa_hat.csv", field_csv(ctx, rep.kappa_hat));
  ctx.log("reconstruct: report.json written");
}

void run_halfspace(const Context& ctx) {
  struct Setup {
    Mesh mesh;
    TensorField A;
    Eigen::Vector3d x0 = Eigen::Vector3d::Zero();
    std::vector<Eigen::VectorXd> xi_set;
    Eigen::VectorXd depths;
    double a_nn = 1.0;
  };
  auto sp = std::make_shared<Setup>();
  Setup& s = *sp;
  stage(2, [&] {
    s.mesh = mesh_from_config(ctx.cfg);
    s.A = tensor_from_config(ctx.cfg, s.mesh);
    for (double xi : ctx.cfg.numbers("halfspace", "xi"))
      s.xi_set.push_back(Eigen::VectorXd::Constant(s.mesh.dim - 1, xi));
    std::vector<double> depths = ctx.cfg.numbers("halfspace", "depths");
    s.depths = Eigen::Map<Eigen::VectorXd>(depths.data(), depths.size());
    s.a_nn = ctx.cfg.number_or("halfspace", "a_nn", 1.0);
    if (ctx.cfg.has("halfspace", "x0")) {
      std::vector<double> x0 = ctx.cfg.numbers("halfspace", "x0");
      for (size_t d = 0; d < x0.size() && d < 3; ++d) s.x0[d] = x0[d];
    } else {
      s.x0[0] = 0.5 * s.mesh.nodes.col(0).maxCoeff();
    }
    return 0;
  });

  stage(3, [&] {
    std::vector<HalfspaceProbe> probes =
        probe_boundary_decay(s.A, s.x0, s.xi_set, s.depths);
    BoundaryTensorEstimate est = estimate_boundary_tensor(probes, s.a_nn);

    std::ostringstream csv;
    csv << "# config_digest=" << ctx.digest << "\n";
    csv << "xi,depth,re_amplitude,im_amplitude\n";
    for (const HalfspaceProbe& p : probes)
      for (int j = 0; j < p.depths.size(); ++j)
        csv << format_g17(p.xi_prime[0]) << "," << format_g17(p.depths[j]) << ","
            << format_g17(p.amplitudes[j].real()) << ","
            << format_g17(p.amplitudes[j].imag()) << "\n";
    write_text(ctx.out / "probes.csv", csv.str());

    json j;
    j["x0"] = {s.x0[0], s.x0[1], s.x0[2]};
    std::vector<std::vector<double>> a;
    for (int r = 0; r < est.A_hat.rows(); ++r) {
      Eigen::VectorXd row = est.A_hat.row(r);
      a.emplace_back(row.data(), row.data() + row.size());
    }
    j["A_hat"] = a;
    j["residual"] = est.residual;
    std::vector<double> freqs, decays, oscs, resids;
    for (const HalfspaceProbe& p : probes) {
      freqs.push_back(p.xi_prime[0]);
      decays.push_back(p.decay_rate);
      oscs.push_back(p.oscillation_rate);
      resids.push_back(p.fit_residual);
    }
    j["frequencies"] = freqs;
    j["decay_rates"] = decays;
    j["oscillation_rates"] = oscs;
    j["fit_residuals"] = resids;
    write_json(ctx, "estimate.json", j);
  });
}

void run_cgo_sweep(const Context& ctx) {
  struct Setup {
    Expression gamma;
    int grid, probe_count, basis_dim;
    double box_scale;
    Eigen::Vector3d xi;
    std::vector<double> rhos;
  };
  Setup s = stage(2, [&] {
    Setup st{Expression::parse(ctx.cfg.str_or("cgo", "gamma", "1"))};
    st.grid = ctx.cfg.integer_or("cgo", "grid", 32);
    st.box_scale = ctx.cfg.number_or("cgo", "box_scale", 2.0);
    st.probe_count = ctx.cfg.integer_or("cgo", "probes", 40);
    st.basis_dim = ctx.cfg.integer_or("cgo", "basis", 10);
    std::vector<double> xi = ctx.cfg.has("cgo", "xi") ? ctx.cfg.numbers("cgo", "xi")
                                                      : std::vector<double>{M_PI, 0, 0};
    if (xi.size() != 3) throw std::invalid_argument("cgo.xi needs 3 components");
    st.xi = Eigen::Vector3d(xi[0], xi[1], xi[2]);
    st.rhos = ctx.cfg.has("cgo", "rho") ? ctx.cfg.numbers("cgo", "rho")
                                        : std::vector<double>{20, 40, 80, 160};
    return st;
  });

  stage(3, [&] {
    Expression g = s.gamma;
    PeriodicField f = extend_gamma(
        [g](const Eigen::Vector3d& x) { return g.eval(x); }, Eigen::Vector3d::Zero(),
        Eigen::Vector3d::Ones(), s.box_scale, s.grid);

    std::ostringstream csv;
    csv << "# config_digest=" << ctx.digest << "\n";
    csv << "rho,remainder_l2,pde_residual\n";
    for (double R : s.rhos) {
      CgoSolution sol = solve_remainder_safe(f, s.xi, R);
      csv << format_g17(sol.phase.rho1.norm()) << "," << format_g17(sol.r_norm_omega) << ","
          << format_g17(sol.pde_residual) << "\n";
      ctx.log("cgo-sweep: |rho|=" + std::to_string(sol.phase.rho1.norm()));
    }
    write_text(ctx.out / "sweep.csv", csv.str());

    RankReport rank = density_gram_test(f, s.probe_count, s.basis_dim);
    json j;
    j["singular_values"] = std::vector<double>(
        rank.singular_values.data(), rank.singular_values.data() + rank.singular_values.size());
    j["rank"] = rank.rank;
    write_json(ctx, "density.json", j);
  });
}

void run_verify(const Context& ctx) {
  struct Check {
    std::string name;
    double value, bound;
    bool pass;
  };
  std::vector<Check> checks;
  auto add = [&](const std::string& name, double value, double bound) {
    checks.push_back({name, value, bound, value <= bound});
  };

  stage(3, [&] {
    Mesh mesh = ctx.cfg.has("domain", "lengths")
                    ? mesh_from_config(ctx.cfg)
                    : build_box_mesh(2, {1, 1}, {32, 32});
    ScalarField gamma = coefficient(ctx.cfg, mesh, "gamma", "gamma");
    ScalarField kappa = coefficient(ctx.cfg, mesh, "kappa", "kappa");
    TensorField A = tensor_from_config(ctx.cfg, mesh);

    OperatorP P(kappa, A);
    SpMat asym = SpMat(P.stiffness().transpose()) - P.stiffness();
    double knorm = 0;
    for (int k = 0; k < asym.outerSize(); ++k)
      for (SpMat::InnerIterator it(asym, k); it; ++it)
        knorm = std::max(knorm, std::abs(it.value()));
    add("self_adjointness_defect", knorm, 1e-10);
    ctx.log("verify: self-adjointness done");

    SpectralData sd = dirichlet_spectrum(P, 8);
    add("lambda1_relative_error",
        std::abs(sd.eigenvalues[0] - 2.0 * M_PI * M_PI) / (2.0 * M_PI * M_PI), 0.01);
    int mult5 = 0;
    for (size_t c = 0; c < sd.multiplicities.size(); ++c)
      if (std::abs(sd.cluster_values[c] - 5.0 * M_PI * M_PI) < 0.05 * 5.0 * M_PI * M_PI)
        mult5 = sd.multiplicities[c];
    add("five_pi_squared_multiplicity_defect", std::abs(mult5 - 2), 0.5);
    double sigma_min = 1e300;
    for (int c = 0; c < sd.cluster_count(); ++c)
      sigma_min = std::min(sigma_min, flux_independence_check(sd, c));
    add("flux_independence_margin", 1e-3 / sigma_min, 1.0);
    ctx.log("verify: spectrum done");

    BoundaryTrace h = BoundaryTrace::sample(mesh, [](const Eigen::Vector3d& x) { return x[0]; });
    FluxTrace ramp = sigma_map(gamma, kappa, A, h, SourceEnvelope::ramp(), 4.0, 1e-2);
    DtNMap dtn(gamma);
    double q = dtn.form(h, h);
    add("equilibrium_dtn_defect", std::abs(ramp.total_flux().tail(1)[0] + q), 5e-3 * q);
    ctx.log("verify: equilibrium done");

    std::mt19937 rng(20260823u + static_cast<unsigned>(ctx.seed));
    std::normal_distribution<double> gauss;
    int mdim = 3, ni = 40, nb = 12;
    Eigen::MatrixXd F(mdim, ni), Ft(mdim, nb), Q(mdim, mdim);
    for (int i = 0; i < mdim; ++i) {
      for (int j = 0; j < ni; ++j) F(i, j) = gauss(rng);
      for (int j = 0; j < nb; ++j) Ft(i, j) = gauss(rng);
      for (int j = 0; j < mdim; ++j) Q(i, j) = gauss(rng);
    }
    Q = Eigen::HouseholderQR<Eigen::MatrixXd>(Q).householderQ();
    EigenspaceMatch match = match_eigenspaces(F, Ft, Q.transpose() * F, Q.transpose() * Ft, mdim);
    add("eigenspace_match_error", (match.T - Q).norm(), 1e-8);

    Eigen::Matrix2d S;
    S << 2, 1, 1, 1;
    add("halfspace_root_defect",
        std::abs(halfspace_root(S, Eigen::VectorXd::Constant(1, 1.0)) -
                 std::complex<double>(-1, 1)),
        1e-12);
  });

  json j;
  bool all = true;
  json list = json::array();
  for (const Check& c : checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << "  value=" << format_g17(c.value)
              << "  bound=" << format_g17(c.bound) << "\n";
    list.push_back({{"name", c.name}, {"value", c.value}, {"bound", c.bound}, {"pass", c.pass}});
    all = all && c.pass;
  }
  j["checks"] = list;
  j["all_pass"] = all;
  write_json(ctx, "verify.json", j);
  if (!all) throw CliError{3, "verification checks failed"};
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  CLI::App app{"electro-thermal measurement and identification toolkit"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path, out_override;
  int threads = 1;
  long long seed = 0;
  bool verbose = false;
  app.add_option("--config", config_path, "experiment config file");
  app.add_option("--out", out_override, "output directory");
  app.add_option("--threads", threads, "solver threads (default 1, deterministic)");
  app.add_option("--seed", seed, "seed recorded in artifacts");
  app.add_flag("--verbose", verbose, "log stages to stderr");

  const char* names[] = {"forward", "measure",   "spectrum", "reconstruct",
                         "verify",  "halfspace", "cgo-sweep"};
  for (const char* n : names) app.add_subcommand(n);

  std::vector<char*> argv;
  std::string prog = "hdi";
  argv.push_back(prog.data());
  std::vector<std::string> owned = args;
  for (std::string& a : owned) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  std::string sub = app.get_subcommands().front()->get_name();
  try {
    Eigen::setNbThreads(std::max(1, threads));
    Context ctx;
    ctx.seed = seed;
    ctx.verbose = verbose;
    if (!config_path.empty()) ctx.cfg = Config::parse_file(config_path);
    else if (sub != "verify") throw CliError{2, "--config is required for " + sub};
    ctx.digest = digest_hex(ctx.cfg.source());

    fs::path out = out_override;
    if (out.empty()) {
      const char* root = std::getenv("HDI_OUT_ROOT");
      out = fs::path(root ? root : ".") / ("hdi_" + sub);
    }
    fs::create_directories(out);
    ctx.out = out;

    if (sub == "forward") run_forward(ctx);
    else if (sub == "measure") run_measure(ctx);
    else if (sub == "spectrum") run_spectrum(ctx);
    else if (sub == "reconstruct") run_reconstruct(ctx);
    else if (sub == "verify") run_verify(ctx);
    else if (sub == "halfspace") run_halfspace(ctx);
    else run_cgo_sweep(ctx);
    return 0;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ExprError& e) {
    std::cerr << "expression error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace hdi
