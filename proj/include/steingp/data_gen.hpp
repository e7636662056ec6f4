#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "steingp/errors.hpp"
#include "steingp/graph.hpp"
#include "steingp/lowrank.hpp"
#include "steingp/mogp.hpp"
#include "steingp/random.hpp"

namespace steingp {

struct AllenCahnParams {
    double eps = 0.08;
    double diff = 100.0;
    double tau = 5e-4;
    int n_steps = 100;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(eps > 0.0) || !(diff > 0.0) || !(tau > 0.0) || n_steps < 1)
            throw DimensionError("Allen-Cahn parameters must be positive");
    }
};

/// Node-by-time value matrix with its labeling maps.
struct DataMatrix {
    Eigen::MatrixXd values;
    std::vector<int> row_ids;
    Eigen::VectorXd col_times;
};

/// Semi-implicit interface dynamics: (I + tau eps diff L) u_{k+1} =
/// u_k + (tau/eps)(u_k - u_k^3), u_1 uniform on [-1, 1]. The sparse system
/// matrix is factorized once and reused for every step. Columns are
/// u_1 .. u_{n_steps}.
inline DataMatrix allen_cahn_generate(const Graph& g, const AllenCahnParams& p) {
    p.validate();
    const int n = g.node_count();
    SparseMat S(n, n);
    S.setIdentity();
    S = SparseMat(S + SparseMat(p.tau * p.eps * p.diff * laplacian_matrix(g)));
    S.makeCompressed();
    Eigen::SparseLU<SparseMat> lu;
    lu.compute(S);
    if (lu.info() != Eigen::Success)
        throw NotPositiveDefiniteError("Allen-Cahn system matrix failed to factorize");

    Rng rng(p.seed);
    DataMatrix d;
    d.values.resize(n, p.n_steps);
    d.values.col(0) = rng.uniform_matrix(n, 1, -1.0, 1.0);
    for (int k = 1; k < p.n_steps; ++k) {
        const Eigen::VectorXd u = d.values.col(k - 1);
        const Eigen::VectorXd rhs =
            u + (p.tau / p.eps) * (u - u.array().cube().matrix());
        d.values.col(k) = lu.solve(rhs);
        if (!d.values.col(k).allFinite())
            throw ConvergenceError("Allen-Cahn blew up at step " + std::to_string(k));
    }
    d.row_ids.resize(n);
    for (int i = 0; i < n; ++i) d.row_ids[i] = i;
    d.col_times = Eigen::VectorXd::LinSpaced(p.n_steps, 0.0, p.n_steps - 1.0);
    return d;
}

/// Power-iterates s <- W D^{-1} s from e_0 to the degree-proportional
/// stationary vector. Bipartite graphs oscillate forever, hence the
/// iteration cap.
inline Eigen::VectorXd stationary_vector(const Graph& g, double tol = 1e-6,
                                         long max_iter = 1000000) {
    const int n = g.node_count();
    const Eigen::VectorXd dinv = g.degrees().cwiseInverse();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
    s[0] = 1.0;
    double delta = std::numeric_limits<double>::infinity();
    for (long k = 0; k < max_iter; ++k) {
        Eigen::VectorXd s_next = g.adjacency() * dinv.cwiseProduct(s);
        delta = (s_next - s).norm();
        s = s_next;
        if (delta < tol) break;
    }
    if (!(delta < tol))
        throw ConvergenceError("stationary iteration stalled at step delta " +
                               std::to_string(delta) +
                               " (bipartite structure oscillates)");
    return s;
}

/// Stationary vector replicated n_cols times plus iid Gaussian noise.
inline DataMatrix stationary_generate(const Graph& g, int n_cols, double noise_std,
                                      std::uint64_t seed, double tol = 1e-6,
                                      long max_iter = 1000000) {
    if (n_cols < 1) throw DimensionError("stationary_generate: n_cols must be >= 1");
    if (noise_std < 0.0) throw DimensionError("noise_std must be nonnegative");
    const int n = g.node_count();
    Eigen::VectorXd s = stationary_vector(g, tol, max_iter);

    Rng rng(seed);
    DataMatrix d;
    d.values = s.replicate(1, n_cols);
    if (noise_std > 0.0) d.values += noise_std * rng.gaussian_matrix(n, n_cols);
    d.row_ids.resize(n);
    for (int i = 0; i < n; ++i) d.row_ids[i] = i;
    d.col_times = Eigen::VectorXd::LinSpaced(n_cols, 0.0, n_cols - 1.0);
    return d;
}

/// Truncated SVD factorization of the training block, with the retained rank
/// and truncation error reported through the out-parameters.
inline LowRankMatrix compress_training_outputs(const Eigen::MatrixXd& Y,
                                               const TruncationPolicy& policy,
                                               double* truncation_error = nullptr) {
    if (!Y.allFinite())
        throw DimensionError("training outputs contain non-finite values");
    return from_dense(Y, policy, truncation_error);
}

enum class TimeSplitLayout { Strided, Prefix };

struct TimeSplit {
    double train_fraction = 0.1;
    TimeSplitLayout layout = TimeSplitLayout::Strided;
};

inline std::vector<int> train_column_indices(int total, const TimeSplit& split) {
    if (!(split.train_fraction > 0.0) || !(split.train_fraction <= 1.0))
        throw DimensionError("train_fraction must lie in (0, 1]");
    const int count = std::max(1, static_cast<int>(std::lround(split.train_fraction * total)));
    std::vector<int> idx;
    if (split.layout == TimeSplitLayout::Prefix) {
        for (int j = 0; j < count && j < total; ++j) idx.push_back(j);
    } else {
        const int stride =
            std::max(1, static_cast<int>(std::lround(1.0 / split.train_fraction)));
        for (int j = 0; j < total; j += stride) idx.push_back(j);
    }
    if (idx.empty()) throw DimensionError("time split produced no training columns");
    return idx;
}

/// Builds a regression task from a generated matrix. Filter models take the
/// training-node signal columns as input points (one point per time, living
/// in R^{#input nodes}) and regress over all nodes; the stationary model
/// takes time itself as input and regresses training nodes onto targets.
/// The target side always spans the full time domain.
inline RegressionTask split_dataset(const DataMatrix& d,
                                    std::shared_ptr<const Graph> graph,
                                    const NodePartition& part, const TimeSplit& split,
                                    OutputModel model,
                                    const TruncationPolicy& compress_policy = {1e-10, -1}) {
    if (!graph) throw DimensionError("split_dataset: graph missing");
    const int total = static_cast<int>(d.values.cols());
    const std::vector<int> train_cols = train_column_indices(total, split);

    RegressionTask task;
    task.graph = std::move(graph);
    task.partition = part;
    task.output.model = model;
    task.target_col_labels = d.col_times;

    const auto pick_cols = [&](const Eigen::MatrixXd& M) {
        Eigen::MatrixXd out(M.rows(), train_cols.size());
        for (std::size_t j = 0; j < train_cols.size(); ++j)
            out.col(j) = M.col(train_cols[j]);
        return out;
    };
    const auto pick_rows = [&](const Eigen::MatrixXd& M, const std::vector<int>& rows) {
        Eigen::MatrixXd out(rows.size(), M.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = M.row(rows[i]);
        return out;
    };

    if (model == OutputModel::Dwa) {
        Eigen::MatrixXd times = d.col_times.transpose();
        task.train_inputs = pick_cols(times);
        task.target_inputs = times;
        Eigen::MatrixXd Yd = pick_cols(pick_rows(d.values, part.input_nodes));
        task.Y = compress_training_outputs(Yd, compress_policy);
        task.train_node_ids = part.input_nodes;
        task.target_node_ids = part.output_nodes;
    } else {
        Eigen::MatrixXd signals = pick_rows(d.values, part.input_nodes);
        task.train_inputs = pick_cols(signals);
        task.target_inputs = signals;
        Eigen::MatrixXd Yd = pick_cols(d.values);
        task.Y = compress_training_outputs(Yd, compress_policy);
        task.train_node_ids = d.row_ids;
        task.target_node_ids = d.row_ids;
    }
    return task;
}

inline void save_data_matrix(const DataMatrix& d, const std::string& csv_path) {
    std::ofstream out(csv_path);
    if (!out) throw ParseError("cannot open for writing: " + csv_path);
    out.precision(17);
    for (Eigen::Index i = 0; i < d.values.rows(); ++i) {
        for (Eigen::Index j = 0; j < d.values.cols(); ++j) {
            if (j) out << ",";
            out << d.values(i, j);
        }
        out << "\n";
    }
    std::ofstream idx(csv_path + ".index");
    if (!idx) throw ParseError("cannot open for writing: " + csv_path + ".index");
    idx.precision(17);
    idx << "# rows: node ids\n";
    for (std::size_t i = 0; i < d.row_ids.size(); ++i)
        idx << d.row_ids[i] << (i + 1 < d.row_ids.size() ? " " : "\n");
    idx << "# cols: time labels\n";
    for (Eigen::Index j = 0; j < d.col_times.size(); ++j)
        idx << d.col_times[j] << (j + 1 < d.col_times.size() ? " " : "\n");
}

inline DataMatrix load_data_matrix(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw ParseError("cannot open data matrix: " + csv_path);
    std::vector<std::vector<double>> rows;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ParseError("bad number '" + cell + "'", lineno);
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError("ragged row", lineno);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("empty data matrix: " + csv_path);

    DataMatrix d;
    d.values.resize(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) d.values(i, j) = rows[i][j];

    std::ifstream idx(csv_path + ".index");
    if (idx) {
        std::string header;
        std::getline(idx, header);
        std::getline(idx, line);
        std::istringstream rs(line);
        int id;
        while (rs >> id) d.row_ids.push_back(id);
        std::getline(idx, header);
        std::getline(idx, line);
        std::istringstream cs(line);
        std::vector<double> times;
        double t;
        while (cs >> t) times.push_back(t);
        d.col_times = Eigen::VectorXd::Map(times.data(), times.size());
    }
    if (d.row_ids.empty()) {
        d.row_ids.resize(d.values.rows());
        for (Eigen::Index i = 0; i < d.values.rows(); ++i)
            d.row_ids[static_cast<std::size_t>(i)] = static_cast<int>(i);
    }
    if (d.col_times.size() == 0)
        d.col_times =
            Eigen::VectorXd::LinSpaced(d.values.cols(), 0.0, d.values.cols() - 1.0);
    if (d.row_ids.size() != static_cast<std::size_t>(d.values.rows()) ||
        d.col_times.size() != d.values.cols())
        throw ParseError("index sidecar does not match the data matrix shape");
    return d;
}

} // namespace steingp
