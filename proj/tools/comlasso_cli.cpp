// comlasso command-line front end: fit, verify, cv, stability, simulate.
//
// Exit codes: 0 ok, 1 input error, 2 verification failure, 3 truncated path.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>
#include <CLI11.hpp>
#include <comlasso/comlasso.hpp>

using namespace comlasso;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_input = 1;
constexpr int exit_verify = 2;
constexpr int exit_truncated = 3;

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// Flags shared by every command that reads a data set.
struct ProblemFlags
{
    std::string data;
    std::string groups;
    std::string loss = "quadratic";
    std::optional<double> loss_param;
    std::string task;
    bool normalize = false;
    std::optional<double> pseudocount;

    void attach(CLI::App* cmd)
    {
        cmd->add_option("--data", data, "compositional CSV: response, then components")->required();
        cmd->add_option("--groups", groups, "group file: column_name,group_label,d_weight");
        cmd->add_option("--loss", loss, "quadratic, asymmetric-l2, huber-regression, squared-hinge, huber-hinge")
            ->capture_default_str();
        cmd->add_option("--loss-param", loss_param, "h of the loss (gamma for squared-hinge)");
        cmd->add_option("--task", task, "regression or classification (default follows the loss)");
        cmd->add_flag("--normalize", normalize, "rescale rows to sum to one");
        cmd->add_option("--pseudocount", pseudocount, "added to every component before the log");
    }

    ProblemSpec load() const
    {
        LoadOptions lo;
        lo.normalize = normalize;
        lo.pseudocount = pseudocount;
        lo.group_file = groups;
        const auto d = load_compositional_csv(data, lo);

        if (loss == "quadratic" && loss_param) throw InputError("loss: quadratic takes no parameter");
        const LossSpec l = loss == "squared-hinge" ? make_builtin_loss(loss, std::nullopt, loss_param)
                                                   : make_builtin_loss(loss, loss_param);
        const Task natural = l.kind() == ResidualKind::margin ? Task::classification : Task::regression;
        Task t = natural;
        if (task == "regression") {
            t = Task::regression;
        } else if (task == "classification") {
            t = Task::classification;
        } else if (!task.empty()) {
            throw InputError("task must be regression or classification, not '" + task + "'");
        }
        if (t != natural) {
            throw InputError("loss '" + loss + "' cannot be used for " +
                             (t == Task::regression ? "regression" : "classification"));
        }
        return {log_transform(d.U, pseudocount), d.y, l, d.groups, t};
    }
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag)
{
    if (flag) return *flag;
    if (const char* env = std::getenv("COMLASSO_SEED")) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw InputError(std::string("COMLASSO_SEED is not an unsigned integer: ") + env);
    }
    return 1;
}

// Weights file: header then one "coefficient,weight" row per column.
Vector read_weights(const std::string& file, Index p)
{
    auto in = csv::open_in(file);
    std::string line;
    std::getline(in, line);
    std::vector<double> w;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = csv::split(line);
        if (f.size() != 2) throw InputError(csv::where(file, lineno) + ": expected coefficient,weight");
        w.push_back(csv::parse_number(f[1], file, lineno, 2));
    }
    if (static_cast<Index>(w.size()) != p) {
        throw InputError(file + ": " + std::to_string(w.size()) + " weights for " + std::to_string(p) +
                         " coefficients");
    }
    return Eigen::Map<Vector>(w.data(), p);
}

std::optional<Vector> adaptive_weights(const std::string& spec, const ProblemSpec& prob)
{
    if (spec.empty()) return std::nullopt;
    if (spec == "pilot") {
        const auto pe = pilot_weights(prob);
        if (pe.fallback) {
            std::cerr << "warning: no unpenalized fit available; pilot weights from a fit at 1e-6 lambda_max\n";
        }
        return pe.weights;
    }
    return read_weights(spec, prob.p());
}

void print_warnings(const SelectionReport& r)
{
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

int status_exit(const SolutionPath& path)
{
    if (path.status == PathStatus::completed) return exit_ok;
    std::cerr << "path truncated (" << to_string(path.status) << ")";
    if (!path.message.empty()) std::cerr << ": " << path.message;
    std::cerr << '\n';
    return exit_truncated;
}

// ------------------------------------------------------------------- fit

struct FitFlags
{
    ProblemFlags problem;
    int max_kinks = -1;
    double lambda_min = 0;
    std::string adaptive;
    std::string out_path;
    std::string out_plot;
    std::string out_bic;
};

int run_fit(const FitFlags& f)
{
    const ProblemSpec prob = f.problem.load();
    PathOptions po;
    po.max_kinks = f.max_kinks;
    po.lambda_min = f.lambda_min;
    po.ridge_diagnostic = true;
    const auto w = adaptive_weights(f.adaptive, prob);
    const SolutionPath path = w ? adaptive_path(prob, *w, po) : run_path(prob, po);

    std::cout << "lambda_max " << fmt(path.lambda_max()) << '\n'
              << "kinks " << path.kinks.size() << '\n'
              << "status " << to_string(path.status) << '\n';
    if (!f.out_path.empty()) write_path_csv(f.out_path, path);
    if (!f.out_plot.empty()) write_plot_csv(f.out_plot, path, prob.groups);
    if (!f.out_bic.empty()) {
        const auto rep = bic_along_path(prob, path);
        print_warnings(rep);
        write_report(f.out_bic, rep);
        std::cout << "bic_lambda " << fmt(rep.chosen_lambda()) << '\n';
    }
    return status_exit(path);
}

// ---------------------------------------------------------------- verify

struct VerifyFlags
{
    ProblemFlags problem;
    std::string path_file;
    std::string adaptive;
    double tol = 1e-7;
    int oracle = 0;
    double oracle_tol = 1e-4;
    std::optional<std::uint64_t> seed;
};

int run_verify(const VerifyFlags& f)
{
    const ProblemSpec prob = f.problem.load();
    const SolutionPath path = read_path_csv(f.path_file);
    const Index p = prob.p();
    if (path.kinks.front().beta.size() != p || path.kinks.front().mu.size() != prob.groups.n_groups()) {
        throw InputError("path file has " + std::to_string(path.kinks.front().beta.size()) +
                         " coefficients and " + std::to_string(path.kinks.front().mu.size()) +
                         " groups; data has " + std::to_string(p) + " and " +
                         std::to_string(prob.groups.n_groups()));
    }
    const auto w = adaptive_weights(f.adaptive, prob);
    // KKT of the weighted problem is the plain KKT of the rescaled one
    const ProblemSpec check = w ? adaptive_reparametrize(prob, *w).problem : prob;
    auto to_check = [&](const Vector& beta) { return w ? Vector(beta.cwiseProduct(*w)) : beta; };

    int failures = 0;
    double worst_kkt = 0, worst_con = 0;
    for (std::size_t t = 0; t < path.kinks.size(); ++t) {
        const auto& k = path.kinks[t];
        if (t > 0 && !(k.lambda < path.kinks[t - 1].lambda)) {
            std::cout << "kink " << t << ": lambda does not decrease\n";
            ++failures;
        }
        const Vector g = to_check(k.beta);
        const auto rep = verify_kkt(check, g, k.lambda, f.tol);
        worst_kkt = std::max(worst_kkt, rep.worst_violation);
        worst_con = std::max(worst_con, rep.worst_constraint);
        if (!rep.ok) {
            std::cout << "kink " << t << " (lambda " << fmt(k.lambda) << "): KKT violation "
                      << fmt(rep.worst_violation) << " at coefficient " << rep.worst_index + 1
                      << ", constraint residual " << fmt(rep.worst_constraint) << '\n';
            ++failures;
        }
    }
    std::cout << "kinks " << path.kinks.size() << '\n'
              << "max_kkt_violation " << fmt(worst_kkt) << '\n'
              << "max_constraint_residual " << fmt(worst_con) << '\n';

    if (f.oracle > 0) {
        std::mt19937_64 rng(resolve_seed(f.seed));
        const double hi = path.lambda_max();
        const double lo = path.kinks.back().lambda;
        std::uniform_real_distribution<double> U(lo, hi);
        OracleOptions oo;
        if (w) oo.penalty_weights = *w;
        // An oracle stopped by its iteration cap is only an upper bound on the
        // optimum: the path must then do at least as well in objective.
        double gap = 0;
        int unconverged = 0;
        for (int r = 0; r < f.oracle; ++r) {
            const double lam = U(rng);
            const auto o = solve_fixed_lambda(prob, lam, oo);
            const Vector b = path.beta_at(lam);
            if (o.converged) {
                gap = std::max(gap, (o.beta - b).lpNorm<Eigen::Infinity>());
                continue;
            }
            ++unconverged;
            const double obj = loss_total(prob, b) + lam * (w ? w->dot(b.cwiseAbs()) : b.lpNorm<1>());
            if (obj > o.objective + f.oracle_tol * std::max(1.0, std::abs(o.objective))) {
                std::cout << "lambda " << fmt(lam) << ": path objective " << fmt(obj)
                          << " above unconverged oracle " << fmt(o.objective) << '\n';
                ++failures;
            }
        }
        std::cout << "oracle_max_gap " << fmt(gap) << '\n';
        if (unconverged > 0) std::cout << "oracle_unconverged " << unconverged << '\n';
        if (gap > f.oracle_tol) {
            std::cout << "oracle gap exceeds " << fmt(f.oracle_tol) << '\n';
            ++failures;
        }
    }
    std::cout << (failures == 0 ? "verified" : "FAILED") << '\n';
    return failures == 0 ? exit_ok : exit_verify;
}

// -------------------------------------------------------------------- cv

struct CvFlags
{
    ProblemFlags problem;
    int folds = 5;
    bool loo = false;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    int max_kinks = -1;
    std::string out;
};

int run_cv(const CvFlags& f)
{
    const ProblemSpec prob = f.problem.load();
    CvOptions co;
    co.folds = f.loo ? 0 : f.folds;
    co.seed = resolve_seed(f.seed);
    co.jobs = f.jobs;
    co.path.max_kinks = f.max_kinks;
    const auto cv = cross_validate(prob, co);
    print_warnings(cv.report);
    const auto& best = cv.report.points[cv.report.chosen];
    std::cout << "folds " << (f.loo ? static_cast<int>(prob.n()) : f.folds) << '\n'
              << "grid_points " << cv.report.points.size() << '\n'
              << "chosen_lambda " << fmt(best.lambda) << '\n'
              << "cv_error " << fmt(best.value) << '\n'
              << "df " << best.df << '\n';
    if (!f.out.empty()) write_report(f.out, cv.report);
    return exit_ok;
}

// ------------------------------------------------------------- stability

struct StabilityFlags
{
    ProblemFlags problem;
    int subsamples = 100;
    double weakness = 0.5;
    int folds = 5;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string out;
};

int run_stability(const StabilityFlags& f)
{
    const ProblemSpec prob = f.problem.load();
    StabilityOptions so;
    so.subsamples = f.subsamples;
    so.weakness = f.weakness;
    so.cv_folds = f.folds;
    so.seed = resolve_seed(f.seed);
    so.jobs = f.jobs;
    const auto rep = stability_selection(prob, so);
    print_warnings(rep);
    std::cout << "lambda_cv " << fmt(rep.chosen_lambda()) << '\n'
              << "subsamples_used " << rep.subsamples_used << '\n'
              << "subsamples_skipped " << rep.subsamples_skipped << '\n';
    if (f.out.empty()) {
        write_report(std::cout, rep);
    } else {
        write_report(f.out, rep);
    }
    return exit_ok;
}

// -------------------------------------------------------------- simulate

struct SimulateFlags
{
    int n = 50;
    std::string groups = "200";
    std::optional<std::uint64_t> seed;
    std::string out = "synthetic";
};

int run_simulate(const SimulateFlags& f)
{
    std::vector<int> sizes;
    std::stringstream ss(f.groups);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size() || v <= 0) throw std::invalid_argument(item);
            sizes.push_back(v);
        } catch (const std::exception&) {
            throw InputError("--groups: '" + item + "' is not a positive integer");
        }
    }
    const auto s = generate_synthetic(f.n, sizes, resolve_seed(f.seed));
    const std::string data = f.out + ".csv", groups = f.out + "_groups.csv", beta = f.out + "_beta.csv";
    write_compositional_csv(data, s.y, s.U);
    write_group_file(groups, s.groups);
    auto out = csv::open_out(beta);
    write_coefficients(out, s.beta);
    if (!out) throw InputError("write failed: " + beta);
    std::cout << "data " << data << '\n' << "groups " << groups << '\n' << "beta " << beta << '\n';
    return exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"comlasso: exact solution paths for zero-sum constrained l1 problems"};
    app.require_subcommand(1);

    FitFlags fit;
    auto* c_fit = app.add_subcommand("fit", "trace the solution path");
    fit.problem.attach(c_fit);
    c_fit->add_option("--max-kinks", fit.max_kinks, "stop after this many kinks (default 10 min(n,p) + 100)");
    c_fit->add_option("--lambda-min", fit.lambda_min, "stop the path at this lambda");
    c_fit->add_option("--adaptive-weights", fit.adaptive, "weights file, or 'pilot' for inverse unpenalized estimates");
    c_fit->add_option("--out-path", fit.out_path, "path CSV");
    c_fit->add_option("--out-plot", fit.out_plot, "plot-data CSV");
    c_fit->add_option("--out-bic", fit.out_bic, "BIC curve along the path (regression)");

    VerifyFlags ver;
    auto* c_ver = app.add_subcommand("verify", "re-check a path file");
    ver.problem.attach(c_ver);
    c_ver->add_option("--path-file", ver.path_file, "path CSV written by fit")->required();
    c_ver->add_option("--adaptive-weights", ver.adaptive, "weights the path was fitted with");
    c_ver->add_option("--tol", ver.tol, "KKT tolerance")->capture_default_str();
    c_ver->add_option("--oracle", ver.oracle, "compare against the fixed-lambda solver at this many random lambdas");
    c_ver->add_option("--oracle-tol", ver.oracle_tol, "largest accepted oracle gap")->capture_default_str();
    c_ver->add_option("--seed", ver.seed, "random seed (default $COMLASSO_SEED, else 1)");

    CvFlags cvf;
    auto* c_cv = app.add_subcommand("cv", "cross-validate over the path");
    cvf.problem.attach(c_cv);
    c_cv->add_option("--folds", cvf.folds, "number of folds")->capture_default_str();
    c_cv->add_flag("--loo", cvf.loo, "leave-one-out");
    c_cv->add_option("--seed", cvf.seed, "random seed (default $COMLASSO_SEED, else 1)");
    c_cv->add_option("--jobs", cvf.jobs, "parallel fits")->capture_default_str();
    c_cv->add_option("--max-kinks", cvf.max_kinks, "kink limit per path");
    c_cv->add_option("--out", cvf.out, "report CSV");

    StabilityFlags stf;
    auto* c_st = app.add_subcommand("stability", "stability selection with the randomized lasso");
    stf.problem.attach(c_st);
    c_st->add_option("--subsamples", stf.subsamples, "number of half-samples")->capture_default_str();
    c_st->add_option("--weakness", stf.weakness, "lower end of the penalty multipliers")->capture_default_str();
    c_st->add_option("--folds", stf.folds, "folds of the cross-validation choosing lambda")->capture_default_str();
    c_st->add_option("--seed", stf.seed, "random seed (default $COMLASSO_SEED, else 1)");
    c_st->add_option("--jobs", stf.jobs, "parallel fits")->capture_default_str();
    c_st->add_option("--out", stf.out, "report CSV (default: standard output)");

    SimulateFlags sim;
    auto* c_sim = app.add_subcommand("simulate", "write a synthetic log-contrast data set");
    c_sim->add_option("--n", sim.n, "observations")->capture_default_str();
    c_sim->add_option("--groups", sim.groups, "comma-separated group sizes, first >= 8")->capture_default_str();
    c_sim->add_option("--seed", sim.seed, "random seed (default $COMLASSO_SEED, else 1)");
    c_sim->add_option("--out", sim.out, "output prefix: <out>.csv, <out>_groups.csv, <out>_beta.csv")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_input;
    }

    try {
        if (c_fit->parsed()) return run_fit(fit);
        if (c_ver->parsed()) return run_verify(ver);
        if (c_cv->parsed()) return run_cv(cvf);
        if (c_st->parsed()) return run_stability(stf);
        if (c_sim->parsed()) return run_simulate(sim);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_input;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return exit_input;
    }
    return exit_input;
}
