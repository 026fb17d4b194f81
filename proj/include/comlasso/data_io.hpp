#pragma once
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>
#include <Eigen/Dense>
#include <comlasso/error.hpp>
#include <comlasso/path.hpp>
#include <comlasso/problem.hpp>
#include <comlasso/selection.hpp>

namespace comlasso {

// ---------------------------------------------------------------- csv helpers

namespace csv {

// Splits one record; double quotes protect commas, "" is an escaped quote.
inline std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else if (c != '\r') {
            out.back() += c;
        }
    }
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

inline std::string where(const std::string& file, std::size_t line, std::size_t col = 0)
{
    std::string s = file + ":" + std::to_string(line);
    if (col > 0) s += ":" + std::to_string(col);
    return s;
}

inline double parse_number(const std::string& field, const std::string& file, std::size_t line,
                           std::size_t col)
{
    if (field.empty()) throw InputError(where(file, line, col) + ": empty field");
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(field, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != field.size()) {
        throw InputError(where(file, line, col) + ": '" + field + "' is not a number");
    }
    if (!std::isfinite(v)) throw InputError(where(file, line, col) + ": non-finite value");
    return v;
}

// 17 significant digits: exact round trip for doubles. NaN becomes an empty cell.
inline std::string format(double v)
{
    if (std::isnan(v)) return {};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ifstream open_in(const std::string& file)
{
    std::ifstream in(file);
    if (!in) throw InputError("cannot open '" + file + "' for reading");
    return in;
}

inline std::ofstream open_out(const std::string& file)
{
    std::ofstream out(file);
    if (!out) throw InputError("cannot open '" + file + "' for writing");
    return out;
}

} // namespace csv

// ------------------------------------------------------------------ ingestion

struct LoadOptions
{
    bool normalize = false;              // rescale rows to sum to one
    std::optional<double> pseudocount;   // allows zero components
    std::string group_file;              // empty: one zero-sum group
};

struct CompositionalData
{
    Matrix U;                             // n x p, rows on the simplex
    Vector y;
    std::string response_name;
    std::vector<std::string> names;       // component names
    std::vector<std::string> group_labels;
    GroupStructure groups;
};

/**
 * Group side file: header column_name,group_label,d_weight and one row per
 * component. Groups must occupy consecutive columns; an empty weight means 1.
 */
inline GroupStructure load_group_file(const std::string& file,
                                      const std::vector<std::string>& names,
                                      std::vector<std::string>* labels_out = nullptr)
{
    auto in = csv::open_in(file);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw InputError(file + ": empty group file");
    ++lineno;
    const auto header = csv::split(line);
    if (header.size() < 2 || header[0] != "column_name" || header[1] != "group_label") {
        throw InputError(csv::where(file, 1) +
                         ": header must be column_name,group_label,d_weight");
    }
    std::map<std::string, std::pair<std::string, double>> entry;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = csv::split(line);
        if (f.size() < 2 || f.size() > 3) {
            throw InputError(csv::where(file, lineno) + ": expected 2 or 3 fields, found " +
                             std::to_string(f.size()));
        }
        const double w = f.size() == 3 && !f[2].empty() ? csv::parse_number(f[2], file, lineno, 3) : 1.0;
        if (!entry.emplace(f[0], std::make_pair(f[1], w)).second) {
            throw InputError(csv::where(file, lineno, 1) + ": column '" + f[0] + "' listed twice");
        }
    }
    std::vector<int> sizes;
    std::vector<std::string> labels;
    Vector d(static_cast<Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto it = entry.find(names[j]);
        if (it == entry.end()) throw InputError(file + ": no group given for column '" + names[j] + "'");
        const auto& [label, w] = it->second;
        if (labels.empty() || labels.back() != label) {
            for (const auto& l : labels) {
                if (l == label) {
                    throw InputError(file + ": group '" + label +
                                     "' is not a consecutive block of columns");
                }
            }
            labels.push_back(label);
            sizes.push_back(0);
        }
        ++sizes.back();
        d[static_cast<Index>(j)] = w;
    }
    if (entry.size() != names.size()) {
        throw InputError(file + ": lists columns that are not in the data file");
    }
    if (labels_out) *labels_out = labels;
    return {sizes, d};
}

/**
 * Reads a CSV with a header row, the response in the first column and the
 * components in the remaining ones. Rows must be nonnegative and sum to one
 * within 1e-6 unless opt.normalize is set; zeros need opt.pseudocount.
 */
inline CompositionalData load_compositional_csv(const std::string& file, const LoadOptions& opt = {})
{
    if (opt.pseudocount && !(*opt.pseudocount > 0)) {
        throw InputError("pseudocount must be positive");
    }
    auto in = csv::open_in(file);
    std::string line;
    if (!std::getline(in, line)) throw InputError(file + ": empty file");
    const auto header = csv::split(line);
    if (header.size() < 3) {
        throw InputError(csv::where(file, 1) + ": need a response and at least two components");
    }
    CompositionalData out;
    out.response_name = header[0];
    out.names.assign(header.begin() + 1, header.end());
    const std::size_t p = out.names.size();

    std::vector<double> yv;
    std::vector<double> uv;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = csv::split(line);
        if (f.size() != p + 1) {
            throw InputError(csv::where(file, lineno) + ": expected " + std::to_string(p + 1) +
                             " fields, found " + std::to_string(f.size()));
        }
        yv.push_back(csv::parse_number(f[0], file, lineno, 1));
        double sum = 0;
        bool zero = false;
        for (std::size_t j = 0; j < p; ++j) {
            const double u = csv::parse_number(f[j + 1], file, lineno, j + 2);
            if (u < 0) {
                throw InputError(csv::where(file, lineno, j + 2) + ": negative component " + f[j + 1]);
            }
            zero |= u == 0;
            sum += u;
            uv.push_back(u);
        }
        if (sum == 0) throw InputError(csv::where(file, lineno) + ": all components are zero");
        if (zero && !opt.pseudocount) {
            throw InputError(csv::where(file, lineno) +
                             ": zero component (log undefined); pass a pseudocount");
        }
        if (opt.normalize) {
            for (std::size_t j = 0; j < p; ++j) uv[uv.size() - p + j] /= sum;
        } else if (std::abs(sum - 1) > 1e-6) {
            throw InputError(csv::where(file, lineno) + ": components sum to " + csv::format(sum) +
                             ", not 1; pass normalize to rescale");
        }
    }
    const auto n = static_cast<Index>(yv.size());
    if (n == 0) throw InputError(file + ": no data rows");
    out.y = Eigen::Map<Vector>(yv.data(), n);
    out.U = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        uv.data(), n, static_cast<Index>(p));
    if (opt.group_file.empty()) {
        out.groups = GroupStructure::single(static_cast<int>(p));
        out.group_labels = {"1"};
    } else {
        out.groups = load_group_file(opt.group_file, out.names, &out.group_labels);
    }
    return out;
}

// Elementwise log, after (u + c)/(1 + p c) when a pseudocount c is given.
inline Matrix log_transform(const Matrix& U, std::optional<double> pseudocount = std::nullopt)
{
    Matrix X = U;
    if (pseudocount) {
        const double c = *pseudocount;
        if (!(c > 0)) throw InputError("pseudocount must be positive");
        X = (U.array() + c) / (1 + static_cast<double>(U.cols()) * c);
    }
    for (Index i = 0; i < X.rows(); ++i) {
        for (Index j = 0; j < X.cols(); ++j) {
            if (!(X(i, j) > 0)) {
                throw InputError("log transform: nonpositive entry at row " + std::to_string(i + 1) +
                                 ", column " + std::to_string(j + 1));
            }
        }
    }
    return X.array().log();
}

// Row-wise softmax: inverse of log_transform for rows on the simplex.
inline Matrix softmax_rows(const Matrix& X)
{
    Matrix U(X.rows(), X.cols());
    for (Index i = 0; i < X.rows(); ++i) {
        const double m = X.row(i).maxCoeff();
        U.row(i) = (X.row(i).array() - m).exp();
        U.row(i) /= U.row(i).sum();
    }
    return U;
}

// ------------------------------------------------------------------ synthetic

struct SyntheticData
{
    Matrix Z;        // latent logistic-normal draws
    Matrix U;        // compositions
    Matrix X;        // log compositions
    Vector y;
    Vector beta;     // true coefficients
    GroupStructure groups;

    ProblemSpec problem() const { return {X, y, make_builtin_loss("quadratic"), groups}; }
};

// Mean of the latent normal: log(p_k/2) on the first five groups, 0 after.
inline Vector synthetic_mean(const std::vector<int>& sizes)
{
    int p = 0;
    for (int s : sizes) p += s;
    Vector eta = Vector::Zero(p);
    int at = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (k < 5) eta.segment(at, sizes[k]).setConstant(std::log(sizes[k] / 2.0));
        at += sizes[k];
    }
    return eta;
}

/**
 * Log of logistic-normal compositions: z ~ N(eta, Sigma) with AR(1) blocks
 * (Sigma_k)_{jl} = 0.5^|j-l|, u = softmax(z), x = log u, and
 * y = X beta* + N(0, 0.5^2) with beta* nonzero on the first group only.
 */
inline SyntheticData generate_synthetic(int n, const std::vector<int>& sizes, std::uint64_t seed)
{
    if (n <= 0) throw InputError("synthetic: n must be positive");
    if (sizes.empty() || sizes[0] < 8) throw InputError("synthetic: first group needs at least 8 columns");
    SyntheticData s;
    s.groups = GroupStructure::zero_sum(sizes);
    const int p = s.groups.size();
    const Vector eta = synthetic_mean(sizes);
    s.beta = Vector::Zero(p);
    s.beta.head(8) << 1, -0.8, 0.6, 0, 0, -1.5, -0.5, 1.2;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0, 1);
    const double rho = 0.5;
    const double innov = std::sqrt(1 - rho * rho);
    s.Z.resize(n, p);
    for (Index i = 0; i < n; ++i) {
        for (int k = 0; k < s.groups.n_groups(); ++k) {
            double prev = 0;
            for (int j = s.groups.begin(k); j < s.groups.end(k); ++j) {
                const double e = N(rng);
                prev = j == s.groups.begin(k) ? e : rho * prev + innov * e;
                s.Z(i, j) = eta[j] + prev;
            }
        }
    }
    s.U = softmax_rows(s.Z);
    s.X = log_transform(s.U);
    s.y = s.X * s.beta;
    for (Index i = 0; i < n; ++i) s.y[i] += 0.5 * N(rng);
    return s;
}

// ------------------------------------------------------------- serialization

// Compositional CSV readable by load_compositional_csv; columns x1..xp.
inline void write_compositional_csv(const std::string& file, const Vector& y, const Matrix& U,
                                    const std::string& response = "y")
{
    auto out = csv::open_out(file);
    out << response;
    for (Index j = 0; j < U.cols(); ++j) out << ",x" << j + 1;
    out << '\n';
    for (Index i = 0; i < U.rows(); ++i) {
        out << csv::format(y[i]);
        for (Index j = 0; j < U.cols(); ++j) out << ',' << csv::format(U(i, j));
        out << '\n';
    }
    if (!out) throw InputError("write failed: " + file);
}

inline void write_group_file(const std::string& file, const GroupStructure& g)
{
    auto out = csv::open_out(file);
    out << "column_name,group_label,d_weight\n";
    for (int j = 0; j < g.size(); ++j) {
        out << 'x' << j + 1 << ',' << g.group_of(j) + 1 << ',' << csv::format(g.d(j)) << '\n';
    }
    if (!out) throw InputError("write failed: " + file);
}

inline void write_coefficients(std::ostream& out, const Vector& beta)
{
    out << "coefficient,beta\n";
    for (Index j = 0; j < beta.size(); ++j) out << j + 1 << ',' << csv::format(beta[j]) << '\n';
}

inline void write_path_csv(std::ostream& out, const SolutionPath& path)
{
    if (path.kinks.empty()) throw InputError("path csv: empty path");
    const Index p = path.kinks.front().beta.size();
    const Index K = path.kinks.front().mu.size();
    out << "kink_index,lambda,event";
    for (Index j = 0; j < p; ++j) out << ",beta_" << j + 1;
    for (Index k = 0; k < K; ++k) out << ",mu_" << k + 1;
    out << '\n';
    for (std::size_t t = 0; t < path.kinks.size(); ++t) {
        const auto& kink = path.kinks[t];
        out << t << ',' << csv::format(kink.lambda) << ',' << to_string(kink.event);
        for (Index j = 0; j < p; ++j) out << ',' << csv::format(kink.beta[j]);
        for (Index k = 0; k < K; ++k) out << ',' << csv::format(kink.mu[k]);
        out << '\n';
    }
}

inline void write_path_csv(const std::string& file, const SolutionPath& path)
{
    auto out = csv::open_out(file);
    write_path_csv(out, path);
    if (!out) throw InputError("write failed: " + file);
}

// Inverse of write_path_csv. The status is not stored and reads back as completed.
inline SolutionPath read_path_csv(const std::string& file)
{
    auto in = csv::open_in(file);
    std::string line;
    if (!std::getline(in, line)) throw InputError(file + ": empty path file");
    const auto header = csv::split(line);
    if (header.size() < 3 || header[0] != "kink_index" || header[1] != "lambda" || header[2] != "event") {
        throw InputError(csv::where(file, 1) + ": not a path file");
    }
    Index p = 0, K = 0;
    for (std::size_t c = 3; c < header.size(); ++c) {
        if (header[c].rfind("beta_", 0) == 0) {
            if (K > 0) throw InputError(csv::where(file, 1, c + 1) + ": beta column after mu");
            ++p;
        } else if (header[c].rfind("mu_", 0) == 0) {
            ++K;
        } else {
            throw InputError(csv::where(file, 1, c + 1) + ": unexpected column " + header[c]);
        }
    }
    SolutionPath path;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = csv::split(line);
        if (f.size() != header.size()) {
            throw InputError(csv::where(file, lineno) + ": expected " +
                             std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
        }
        Kink k;
        k.lambda = csv::parse_number(f[1], file, lineno, 2);
        try {
            k.event = parse_event(f[2]);
        } catch (const Error&) {
            throw InputError(csv::where(file, lineno, 3) + ": unknown event '" + f[2] + "'");
        }
        k.beta.resize(p);
        k.mu.resize(K);
        for (Index j = 0; j < p; ++j) k.beta[j] = csv::parse_number(f[3 + j], file, lineno, 4 + j);
        for (Index c = 0; c < K; ++c) {
            const auto& cell = f[3 + p + c];
            k.mu[c] = cell.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : csv::parse_number(cell, file, lineno, 4 + p + c);
        }
        path.kinks.push_back(std::move(k));
    }
    if (path.kinks.empty()) throw InputError(file + ": path file has no kinks");
    return path;
}

/**
 * Long-format plot data, one row per (kink, coefficient). norm_ratio is
 * |beta(lambda)|_1 over the l1 norm at the last kink reached; group_norm_ratio
 * is the same with group norms. Ratios are 0 when the normalizer vanishes.
 */
inline void write_plot_csv(std::ostream& out, const SolutionPath& path, const GroupStructure& g)
{
    if (path.kinks.empty()) throw InputError("plot csv: empty path");
    const Vector& last = path.kinks.back().beta;
    const double total = last.lpNorm<1>();
    Vector group_total(g.n_groups());
    for (int k = 0; k < g.n_groups(); ++k) group_total[k] = last.segment(g.begin(k), g.group_size(k)).lpNorm<1>();
    auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };

    out << "kink_index,lambda,coefficient,group,norm_ratio,group_norm_ratio,beta\n";
    for (std::size_t t = 0; t < path.kinks.size(); ++t) {
        const Vector& b = path.kinks[t].beta;
        const double nr = ratio(b.lpNorm<1>(), total);
        for (int j = 0; j < g.size(); ++j) {
            const int k = g.group_of(j);
            const double gr = ratio(b.segment(g.begin(k), g.group_size(k)).lpNorm<1>(), group_total[k]);
            out << t << ',' << csv::format(path.kinks[t].lambda) << ',' << j + 1 << ',' << k + 1 << ','
                << csv::format(nr) << ',' << csv::format(gr) << ',' << csv::format(b[j]) << '\n';
        }
    }
}

inline void write_plot_csv(const std::string& file, const SolutionPath& path, const GroupStructure& g)
{
    auto out = csv::open_out(file);
    write_plot_csv(out, path, g);
    if (!out) throw InputError("write failed: " + file);
}

// Criterion curve (index,lambda,df,value,chosen) or, with probabilities, feature,probability.
inline void write_report(std::ostream& out, const SelectionReport& rep)
{
    if (!rep.probabilities.empty()) {
        out << "feature,probability\n";
        for (std::size_t j = 0; j < rep.probabilities.size(); ++j) {
            out << j + 1 << ',' << csv::format(rep.probabilities[j]) << '\n';
        }
        return;
    }
    out << "index,lambda,df,value,chosen\n";
    for (std::size_t t = 0; t < rep.points.size(); ++t) {
        const auto& pt = rep.points[t];
        out << t << ',' << csv::format(pt.lambda) << ',' << pt.df << ',' << csv::format(pt.value) << ','
            << (static_cast<int>(t) == rep.chosen ? 1 : 0) << '\n';
    }
}

inline void write_report(const std::string& file, const SelectionReport& rep)
{
    auto out = csv::open_out(file);
    write_report(out, rep);
    if (!out) throw InputError("write failed: " + file);
}

} // namespace comlasso
