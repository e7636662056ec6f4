#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <initializer_list>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "steingp/data_gen.hpp"
#include "steingp/errors.hpp"
#include "steingp/graph.hpp"
#include "steingp/mogp.hpp"
#include "steingp/stein_solvers.hpp"

namespace steingp {

/// Shortest round-trip decimal form, so repeated runs emit identical bytes.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

enum class DataSource { AllenCahn, Stationary };

inline std::string to_string(DataSource s) {
    switch (s) {
        case DataSource::AllenCahn: return "allen_cahn";
        case DataSource::Stationary: return "stationary";
    }
    return "?";
}

inline DataSource data_source_from_string(const std::string& s) {
    if (s == "allen_cahn") return DataSource::AllenCahn;
    if (s == "stationary") return DataSource::Stationary;
    throw ParseError("unknown data source: " + s);
}

inline std::string to_string(TimeSplitLayout l) {
    return l == TimeSplitLayout::Strided ? "strided" : "prefix";
}

inline TimeSplitLayout layout_from_string(const std::string& s) {
    if (s == "strided") return TimeSplitLayout::Strided;
    if (s == "prefix") return TimeSplitLayout::Prefix;
    throw ParseError("unknown time-split layout: " + s);
}

struct DataConfig {
    DataSource source = DataSource::AllenCahn;
    double eps = 0.08;
    double diff = 100.0;
    double tau = 5e-4;
    double noise_std = -1.0; // stationary only; negative means auto (1% of peak)
    int time_length = 100;
    double train_fraction = 0.1;
    TimeSplitLayout layout = TimeSplitLayout::Strided;
    double node_input_fraction = 0.2;
    std::uint64_t seed = 1;
    std::string matrix_path; // nonempty: load this CSV instead of generating
};

struct SolverSection {
    std::vector<SolverChoice> solvers = {SolverChoice::Kpik, SolverChoice::Lrpcg};
    double rel_residual_tol = 1e-8;
    int max_iter = 50;
    double trunc_tol = 1e-10;
    int precond_steps = 2;
};

struct SweepSpec {
    std::string parameter; // one of alpha, lengthscale, sigma2
    std::vector<double> values;
};

struct ExperimentConfig {
    std::string graph_path;
    OutputModel model = OutputModel::GlobalFilter;
    double alpha = 1.0;
    SEKernelParams kernel;
    double sigma2 = 5e-3;
    DataConfig data;
    SolverSection solver;
    std::vector<SweepSpec> sweep;
    std::string output_dir = "out";

    void validate() const {
        if (graph_path.empty()) throw ParseError("config requires graph_path");
        kernel.validate();
        if (!(alpha > 0.0)) throw ParseError("alpha must be positive");
        if (!(sigma2 > 0.0)) throw ParseError("sigma2 must be positive");
        if (data.source == DataSource::AllenCahn &&
            (!(data.eps > 0.0) || !(data.diff > 0.0) || !(data.tau > 0.0)))
            throw ParseError("allen_cahn parameters must be positive");
        if (data.time_length < 1) throw ParseError("time_length must be >= 1");
        if (!(data.train_fraction > 0.0) || !(data.train_fraction <= 1.0))
            throw ParseError("train_fraction must lie in (0, 1]");
        if (!(data.node_input_fraction > 0.0) || !(data.node_input_fraction < 1.0))
            throw ParseError("node_input_fraction must lie in (0, 1)");
        if (solver.solvers.empty()) throw ParseError("solver list is empty");
        if (!(solver.rel_residual_tol > 0.0) || solver.max_iter < 1 ||
            !(solver.trunc_tol > 0.0) || solver.precond_steps < 1)
            throw ParseError("solver section values out of range");
        for (const SweepSpec& s : sweep) {
            if (s.parameter != "alpha" && s.parameter != "lengthscale" &&
                s.parameter != "sigma2")
                throw ParseError("unknown sweep parameter: " + s.parameter);
            if (s.parameter == "alpha" && model == OutputModel::Dwa)
                throw ParseError("the dwa model does not use alpha; remove the alpha sweep");
            if (s.values.empty())
                throw ParseError("sweep over " + s.parameter + " has no values");
            for (double v : s.values)
                if (!(v > 0.0))
                    throw ParseError("sweep values for " + s.parameter + " must be positive");
        }
    }

    SolverConfig solver_config() const {
        SolverConfig c;
        c.rel_residual_tol = solver.rel_residual_tol;
        c.max_iter = solver.max_iter;
        c.trunc = TruncationPolicy{solver.trunc_tol, -1};
        c.precond_kpik_steps = solver.precond_steps;
        return c;
    }
};

namespace cfgio {

using nlohmann::json;

inline void require_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ParseError("unknown key '" + it.key() + "' in " + where);
    }
}

inline double number_at(const json& j, const char* key, double fallback,
                        const std::string& where) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) throw ParseError(std::string(key) + " in " + where + " must be a number");
    return v.get<double>();
}

inline int int_at(const json& j, const char* key, int fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_integer())
        throw ParseError(std::string(key) + " in " + where + " must be an integer");
    return v.get<int>();
}

inline std::uint64_t u64_at(const json& j, const char* key, std::uint64_t fallback,
                            const std::string& where) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<long long>() < 0))
        throw ParseError(std::string(key) + " in " + where + " must be a nonnegative integer");
    return v.get<std::uint64_t>();
}

inline std::string string_at(const json& j, const char* key, const std::string& fallback,
                             const std::string& where) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_string()) throw ParseError(std::string(key) + " in " + where + " must be a string");
    return v.get<std::string>();
}

} // namespace cfgio

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    using cfgio::int_at;
    using cfgio::number_at;
    using cfgio::require_keys;
    using cfgio::string_at;
    using cfgio::u64_at;

    if (!j.is_object()) throw ParseError("config root must be a JSON object");
    require_keys(j,
                 {"graph_path", "model", "alpha", "kernel", "sigma2", "data", "solver",
                  "sweep", "output_dir"},
                 "config");

    ExperimentConfig c;
    c.graph_path = string_at(j, "graph_path", "", "config");
    c.model = output_model_from_string(string_at(j, "model", "global_filter", "config"));
    c.alpha = number_at(j, "alpha", 1.0, "config");
    c.sigma2 = number_at(j, "sigma2", 5e-3, "config");
    c.output_dir = string_at(j, "output_dir", "out", "config");

    if (j.contains("kernel")) {
        const nlohmann::json& k = j.at("kernel");
        if (!k.is_object()) throw ParseError("kernel must be an object");
        require_keys(k, {"lengthscale", "variance"}, "kernel");
        c.kernel.lengthscale = number_at(k, "lengthscale", 10.0, "kernel");
        c.kernel.variance = number_at(k, "variance", 1.0, "kernel");
    }

    if (j.contains("data")) {
        const nlohmann::json& d = j.at("data");
        if (!d.is_object()) throw ParseError("data must be an object");
        require_keys(d,
                     {"source", "eps", "diff", "tau", "noise_std", "time_length",
                      "train_fraction", "layout", "node_input_fraction", "seed",
                      "matrix_path"},
                     "data");
        c.data.source = data_source_from_string(string_at(d, "source", "allen_cahn", "data"));
        c.data.eps = number_at(d, "eps", c.data.eps, "data");
        c.data.diff = number_at(d, "diff", c.data.diff, "data");
        c.data.tau = number_at(d, "tau", c.data.tau, "data");
        c.data.noise_std = number_at(d, "noise_std", c.data.noise_std, "data");
        c.data.time_length = int_at(d, "time_length", c.data.time_length, "data");
        c.data.train_fraction = number_at(d, "train_fraction", c.data.train_fraction, "data");
        c.data.layout = layout_from_string(string_at(d, "layout", "strided", "data"));
        c.data.node_input_fraction =
            number_at(d, "node_input_fraction", c.data.node_input_fraction, "data");
        c.data.seed = u64_at(d, "seed", c.data.seed, "data");
        c.data.matrix_path = string_at(d, "matrix_path", "", "data");
    }

    if (j.contains("solver")) {
        const nlohmann::json& s = j.at("solver");
        if (!s.is_object()) throw ParseError("solver must be an object");
        require_keys(s, {"name", "rel_residual_tol", "max_iter", "trunc_tol", "precond_steps"},
                     "solver");
        if (s.contains("name")) {
            const nlohmann::json& nm = s.at("name");
            c.solver.solvers.clear();
            if (nm.is_string()) {
                c.solver.solvers.push_back(solver_from_string(nm.get<std::string>()));
            } else if (nm.is_array()) {
                for (const nlohmann::json& e : nm) {
                    if (!e.is_string())
                        throw ParseError("solver name entries must be strings");
                    c.solver.solvers.push_back(solver_from_string(e.get<std::string>()));
                }
            } else {
                throw ParseError("solver name must be a string or an array of strings");
            }
        }
        c.solver.rel_residual_tol =
            number_at(s, "rel_residual_tol", c.solver.rel_residual_tol, "solver");
        c.solver.max_iter = int_at(s, "max_iter", c.solver.max_iter, "solver");
        c.solver.trunc_tol = number_at(s, "trunc_tol", c.solver.trunc_tol, "solver");
        c.solver.precond_steps = int_at(s, "precond_steps", c.solver.precond_steps, "solver");
    }

    if (j.contains("sweep")) {
        const nlohmann::json& sw = j.at("sweep");
        if (!sw.is_array()) throw ParseError("sweep must be an array");
        for (const nlohmann::json& e : sw) {
            if (!e.is_object()) throw ParseError("sweep entries must be objects");
            require_keys(e, {"parameter", "values"}, "sweep entry");
            SweepSpec spec;
            spec.parameter = string_at(e, "parameter", "", "sweep entry");
            if (!e.contains("values") || !e.at("values").is_array())
                throw ParseError("sweep entry requires a values array");
            for (const nlohmann::json& v : e.at("values")) {
                if (!v.is_number()) throw ParseError("sweep values must be numbers");
                spec.values.push_back(v.get<double>());
            }
            c.sweep.push_back(std::move(spec));
        }
    }

    c.validate();
    return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["graph_path"] = c.graph_path;
    j["model"] = to_string(c.model);
    j["alpha"] = c.alpha;
    j["kernel"] = {{"lengthscale", c.kernel.lengthscale}, {"variance", c.kernel.variance}};
    j["sigma2"] = c.sigma2;

    nlohmann::json d;
    d["source"] = to_string(c.data.source);
    d["eps"] = c.data.eps;
    d["diff"] = c.data.diff;
    d["tau"] = c.data.tau;
    d["noise_std"] = c.data.noise_std;
    d["time_length"] = c.data.time_length;
    d["train_fraction"] = c.data.train_fraction;
    d["layout"] = to_string(c.data.layout);
    d["node_input_fraction"] = c.data.node_input_fraction;
    d["seed"] = c.data.seed;
    if (!c.data.matrix_path.empty()) d["matrix_path"] = c.data.matrix_path;
    j["data"] = d;

    nlohmann::json names = nlohmann::json::array();
    for (SolverChoice s : c.solver.solvers) names.push_back(to_string(s));
    j["solver"] = {{"name", names},
                   {"rel_residual_tol", c.solver.rel_residual_tol},
                   {"max_iter", c.solver.max_iter},
                   {"trunc_tol", c.solver.trunc_tol},
                   {"precond_steps", c.solver.precond_steps}};

    nlohmann::json sw = nlohmann::json::array();
    for (const SweepSpec& s : c.sweep)
        sw.push_back({{"parameter", s.parameter}, {"values", s.values}});
    j["sweep"] = sw;
    j["output_dir"] = c.output_dir;
    return j;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

struct MetricsRow {
    std::string solver;
    std::string model;
    double alpha = 0.0;
    double lengthscale = 0.0;
    double sigma2 = 0.0;
    int iterations = 0;
    int solution_rank = 0;
    double runtime_s = 0.0;
    double rel_residual = 0.0;
    bool converged = false;

    std::string csv_line() const {
        std::string s;
        s += solver;
        s += ',';
        s += model;
        s += ',';
        s += format_double(alpha);
        s += ',';
        s += format_double(lengthscale);
        s += ',';
        s += format_double(sigma2);
        s += ',';
        s += std::to_string(iterations);
        s += ',';
        s += std::to_string(solution_rank);
        s += ',';
        s += format_double(runtime_s);
        s += ',';
        s += format_double(rel_residual);
        s += ',';
        s += converged ? "true" : "false";
        return s;
    }
};

inline constexpr const char* kMetricsHeader =
    "solver,model,alpha,lengthscale,sigma2,iterations,solution_rank,runtime_s,"
    "rel_residual,converged";

struct PreparedExperiment {
    std::shared_ptr<const Graph> graph;
    DataMatrix data;
    NodePartition partition;
    ExperimentConfig resolved; // defaults and auto noise filled in
};

inline PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    PreparedExperiment prep;
    prep.resolved = cfg;
    prep.graph = std::make_shared<const Graph>(
        load_edge_list(cfg.graph_path, ConnectivityPolicy::Require));

    if (!cfg.data.matrix_path.empty()) {
        prep.data = load_data_matrix(cfg.data.matrix_path);
        if (prep.data.values.rows() != prep.graph->node_count())
            throw DimensionError("data matrix rows do not match graph node count");
    } else if (cfg.data.source == DataSource::AllenCahn) {
        AllenCahnParams p;
        p.eps = cfg.data.eps;
        p.diff = cfg.data.diff;
        p.tau = cfg.data.tau;
        p.n_steps = cfg.data.time_length;
        p.seed = cfg.data.seed;
        prep.data = allen_cahn_generate(*prep.graph, p);
    } else {
        double noise = cfg.data.noise_std;
        if (noise < 0.0) noise = 0.01 * stationary_vector(*prep.graph).maxCoeff();
        prep.resolved.data.noise_std = noise;
        prep.data = stationary_generate(*prep.graph, cfg.data.time_length, noise,
                                        cfg.data.seed);
    }

    prep.partition =
        partition_nodes(*prep.graph, cfg.data.node_input_fraction, cfg.data.seed);
    return prep;
}

inline RegressionTask base_task(const PreparedExperiment& prep) {
    const ExperimentConfig& c = prep.resolved;
    TimeSplit split{c.data.train_fraction, c.data.layout};
    RegressionTask t = split_dataset(prep.data, prep.graph, prep.partition, split, c.model,
                                     TruncationPolicy{c.solver.trunc_tol, -1});
    t.output.alpha = c.alpha;
    t.kernel = c.kernel;
    t.sigma2 = c.sigma2;
    return t;
}

struct SweepPoint {
    std::string parameter; // empty: the base configuration
    double value = 0.0;
};

inline std::string point_label(const SweepPoint& p) {
    if (p.parameter.empty()) return "base";
    return p.parameter + "=" + format_double(p.value);
}

inline std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg) {
    std::vector<SweepPoint> pts;
    for (const SweepSpec& s : cfg.sweep)
        for (double v : s.values) pts.push_back({s.parameter, v});
    if (pts.empty()) pts.push_back({"", 0.0});
    return pts;
}

inline void apply_sweep_point(RegressionTask& t, const SweepPoint& p) {
    if (p.parameter.empty()) return;
    if (p.parameter == "alpha")
        t.output.alpha = p.value;
    else if (p.parameter == "lengthscale")
        t.kernel.lengthscale = p.value;
    else if (p.parameter == "sigma2")
        t.sigma2 = p.value;
    else
        throw ParseError("unknown sweep parameter: " + p.parameter);
}

inline void write_predictions_csv(const PosteriorMean& pm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    out << "node";
    for (Eigen::Index c = 0; c < pm.col_labels.size(); ++c)
        out << ',' << format_double(pm.col_labels[c]);
    out << "\n";
    const Eigen::MatrixXd M = pm.dense();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        out << pm.node_ids[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < M.cols(); ++c) out << ',' << format_double(M(r, c));
        out << "\n";
    }
    if (!out) throw ParseError("failed writing " + path);
}

inline void write_config_echo(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    out << experiment_config_to_json(cfg).dump(2) << "\n";
}

/// Runs every (sweep point, solver) pair, appending one metrics row each.
/// Exit status: 0 all solves converged, 1 some did not, 2 a module error
/// aborted the sweep (partial metrics are kept).
inline int run_experiment(const ExperimentConfig& cfg, const std::string& out_override = "",
                          bool parallel = false, std::ostream& log = std::cout,
                          std::ostream& err = std::cerr) {
    namespace fs = std::filesystem;
    ExperimentConfig c = cfg;
    if (!out_override.empty()) c.output_dir = out_override;

    PreparedExperiment prep;
    try {
        prep = prepare_experiment(c);
    } catch (const std::exception& e) {
        err << "experiment setup failed: " << e.what() << "\n";
        return 2;
    }

    fs::create_directories(c.output_dir);
    const std::string metrics_path = c.output_dir + "/metrics.csv";
    const std::string predictions_path = c.output_dir + "/predictions.csv";
    const std::string echo_path = c.output_dir + "/config_echo.json";

    {
        ExperimentConfig echo = prep.resolved;
        echo.output_dir = c.output_dir;
        write_config_echo(echo, echo_path);
    }

    std::ofstream metrics(metrics_path);
    if (!metrics) {
        err << "cannot open for writing: " << metrics_path << "\n";
        return 2;
    }
    metrics << kMetricsHeader << "\n" << std::flush;

    const RegressionTask base = base_task(prep);
    const std::vector<SweepPoint> pts = sweep_points(c);
    const SolverConfig scfg = c.solver_config();

    struct Job {
        SweepPoint point;
        SolverChoice solver;
    };
    std::vector<Job> jobs;
    for (const SweepPoint& p : pts)
        for (SolverChoice s : c.solver.solvers) jobs.push_back({p, s});

    const auto run_job = [&](const Job& jb) {
        RegressionTask t = base;
        apply_sweep_point(t, jb.point);
        auto [pm, rep] = posterior_mean(t, jb.solver, scfg);
        MetricsRow row;
        row.solver = to_string(jb.solver);
        row.model = to_string(c.model);
        row.alpha = t.output.alpha;
        row.lengthscale = t.kernel.lengthscale;
        row.sigma2 = t.sigma2;
        row.iterations = rep.iterations;
        row.solution_rank = rep.solution_rank;
        row.runtime_s = rep.runtime_seconds;
        row.rel_residual = rep.rel_residual;
        row.converged = rep.converged;
        return std::pair<MetricsRow, PosteriorMean>(std::move(row), std::move(pm));
    };
    const auto job_name = [&](const Job& jb) {
        return "sweep point " + point_label(jb.point) + " solver=" + to_string(jb.solver);
    };

    bool all_converged = true;
    PosteriorMean last_pm;
    bool have_pm = false;
    std::string failure;

    const auto consume = [&](const Job& jb, std::pair<MetricsRow, PosteriorMean>&& res) {
        metrics << res.first.csv_line() << "\n" << std::flush;
        log << job_name(jb) << ": iterations=" << res.first.iterations
            << " rank=" << res.first.solution_rank
            << " rel_residual=" << format_double(res.first.rel_residual)
            << " converged=" << (res.first.converged ? "true" : "false") << "\n";
        all_converged = all_converged && res.first.converged;
        last_pm = std::move(res.second);
        have_pm = true;
    };

    if (!parallel) {
        for (const Job& jb : jobs) {
            try {
                consume(jb, run_job(jb));
            } catch (const std::exception& e) {
                failure = job_name(jb) + ": " + e.what();
                break;
            }
        }
    } else {
        std::vector<std::future<std::pair<MetricsRow, PosteriorMean>>> futs;
        futs.reserve(jobs.size());
        for (const Job& jb : jobs)
            futs.push_back(std::async(std::launch::async, run_job, jb));
        for (std::size_t i = 0; i < futs.size(); ++i) {
            try {
                auto res = futs[i].get();
                if (failure.empty()) consume(jobs[i], std::move(res));
            } catch (const std::exception& e) {
                if (failure.empty()) failure = job_name(jobs[i]) + ": " + e.what();
            }
        }
    }

    if (!failure.empty()) {
        err << "experiment aborted at " << failure << "\n";
        return 2;
    }

    if (have_pm) write_predictions_csv(last_pm, predictions_path);
    log << "wrote " << jobs.size() << " metrics rows to " << metrics_path << "\n";
    if (!all_converged) {
        err << "some solves did not converge (see " << metrics_path << ")\n";
        return 1;
    }
    return 0;
}

inline std::string write_generated_data(const ExperimentConfig& cfg,
                                        const std::string& out_override = "",
                                        std::ostream& log = std::cout) {
    namespace fs = std::filesystem;
    ExperimentConfig c = cfg;
    if (!out_override.empty()) c.output_dir = out_override;
    PreparedExperiment prep = prepare_experiment(c);
    fs::create_directories(c.output_dir);
    const std::string data_path = c.output_dir + "/data.csv";
    save_data_matrix(prep.data, data_path);
    ExperimentConfig echo = prep.resolved;
    echo.output_dir = c.output_dir;
    write_config_echo(echo, c.output_dir + "/config_echo.json");
    log << "wrote " << prep.data.values.rows() << "x" << prep.data.values.cols()
        << " data matrix to " << data_path << "\n";
    return data_path;
}

struct EigEstimate {
    double value = 0.0;
    bool converged = false;
};

/// Rayleigh-quotient power iteration for the dominant eigenvalue of a
/// symmetric positive map.
inline EigEstimate power_extreme(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply, Eigen::Index n,
    int max_iter = 5000, double tol = 1e-10) {
    Rng rng(0x9e3779b97f4a7c15ull);
    Eigen::VectorXd v = rng.gaussian_matrix(n, 1);
    v /= v.norm();
    double lam = 0.0;
    for (int k = 0; k < max_iter; ++k) {
        const Eigen::VectorXd w = apply(v);
        const double lam_new = v.dot(w);
        const double wn = w.norm();
        if (!(wn > 0.0)) return {0.0, true};
        v = w / wn;
        if (k > 0 && std::abs(lam_new - lam) <= tol * std::max(1.0, std::abs(lam_new)))
            return {lam_new, true};
        lam = lam_new;
    }
    return {lam, false};
}

struct ConditionReport {
    double lambda_out = std::numeric_limits<double>::quiet_NaN();
    double lambda_in = std::numeric_limits<double>::quiet_NaN();
    double mu_out = std::numeric_limits<double>::quiet_NaN();
    double mu_in = std::numeric_limits<double>::quiet_NaN();
    double ratio = std::numeric_limits<double>::quiet_NaN();
    double bound = std::numeric_limits<double>::quiet_NaN();
    bool estimates_converged = false;
    bool within_bound = false;
};

/// Extreme-eigenvalue estimates of both covariance factors plus the spectral
/// condition ratio of the full Kronecker-plus-shift system and its upper
/// bound 1 + lambda_out*lambda_in/sigma2.
inline ConditionReport condition_from_operators(const CovarianceOperator& KO,
                                                const CovarianceOperator& KI, double sigma2,
                                                std::ostream* out = nullptr) {
    if (!(sigma2 > 0.0)) throw DimensionError("sigma2 must be positive");
    const auto apply_of = [](const CovarianceOperator& op) {
        return [&op](const Eigen::VectorXd& v) { return Eigen::VectorXd(op.apply(v)); };
    };
    const auto solve_of = [](const CovarianceOperator& op) {
        return [&op](const Eigen::VectorXd& v) { return Eigen::VectorXd(op.solve(v)); };
    };

    const EigEstimate lo = power_extreme(apply_of(KO), KO.dim());
    const EigEstimate li = power_extreme(apply_of(KI), KI.dim());
    const EigEstimate io = power_extreme(solve_of(KO), KO.dim());
    const EigEstimate ii = power_extreme(solve_of(KI), KI.dim());

    ConditionReport r;
    r.lambda_out = lo.value;
    r.lambda_in = li.value;
    r.mu_out = io.value > 0.0 ? 1.0 / io.value : std::numeric_limits<double>::quiet_NaN();
    r.mu_in = ii.value > 0.0 ? 1.0 / ii.value : std::numeric_limits<double>::quiet_NaN();
    r.estimates_converged = lo.converged && li.converged && io.converged && ii.converged;
    r.bound = 1.0 + r.lambda_out * r.lambda_in / sigma2;
    r.ratio = (r.lambda_out * r.lambda_in + sigma2) / (r.mu_out * r.mu_in + sigma2);
    r.within_bound = r.ratio <= r.bound * (1.0 + 1e-9);

    if (out) {
        if (!r.estimates_converged) {
            *out << "warning: extreme eigenvalue estimation did not converge; "
                    "reporting the bound only\n";
            *out << "upper bound = " << format_double(r.bound) << "\n";
        } else {
            *out << "lambda_out_max = " << format_double(r.lambda_out) << "\n";
            *out << "lambda_in_max = " << format_double(r.lambda_in) << "\n";
            *out << "mu_out_min = " << format_double(r.mu_out) << "\n";
            *out << "mu_in_min = " << format_double(r.mu_in) << "\n";
            *out << "condition ratio = " << format_double(r.ratio) << "\n";
            *out << "upper bound = " << format_double(r.bound) << "\n";
            *out << "ratio <= bound: " << (r.within_bound ? "yes" : "no") << "\n";
        }
    }
    return r;
}

inline ConditionReport condition_report(const ExperimentConfig& cfg,
                                        std::ostream& out = std::cout) {
    PreparedExperiment prep = prepare_experiment(cfg);
    RegressionTask t = base_task(prep);
    AssembledProblem a = assemble_problem(t);
    out << "model = " << to_string(cfg.model)
        << ", output dim = " << a.problem.KO->dim()
        << ", input dim = " << a.problem.KI->dim() << "\n";
    return condition_from_operators(*a.problem.KO, *a.problem.KI, t.sigma2, &out);
}

} // namespace steingp
