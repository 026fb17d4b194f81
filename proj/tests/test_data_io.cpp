#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <unistd.h>
#include <random>
#include <sstream>
#include <gtest/gtest.h>
#include "test_util.hpp"
#include <comlasso/comlasso.hpp>

using namespace comlasso;
namespace fs = std::filesystem;

namespace {

class TempDir
{
public:
    TempDir()
    {
        static int counter = 0;
        dir_ = fs::temp_directory_path() /
               ("comlasso_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(dir_);
    }
    ~TempDir() { fs::remove_all(dir_); }

    std::string write(const std::string& name, const std::string& text) const
    {
        const auto f = (dir_ / name).string();
        std::ofstream(f) << text;
        return f;
    }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

private:
    fs::path dir_;
};

std::string slurp(const std::string& file)
{
    std::ifstream in(file);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string error_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(LoadCsv, AcceptsSimplexRows)
{
    TempDir t;
    const auto f = t.write("a.csv", "y,a,b,c\n1.5,0.2,0.3,0.5\n-2,0.1,0.1,0.8\n");
    const auto d = load_compositional_csv(f);
    EXPECT_EQ(d.U.rows(), 2);
    EXPECT_EQ(d.U.cols(), 3);
    EXPECT_EQ(d.U(0, 1), 0.3);
    EXPECT_EQ(d.y[1], -2);
    EXPECT_EQ(d.names, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(d.groups.n_groups(), 1);
    EXPECT_EQ(d.groups.d(), Vector::Ones(3));
}

TEST(LoadCsv, RowSumViolation)
{
    TempDir t;
    const auto f = t.write("a.csv", "y,a,b,c\n1,0.2,0.3,0.4\n");
    const auto msg = error_of([&] { load_compositional_csv(f); });
    EXPECT_NE(msg.find("sum"), std::string::npos) << msg;
    EXPECT_NE(msg.find(":2"), std::string::npos) << msg;
    LoadOptions opt;
    opt.normalize = true;
    const auto d = load_compositional_csv(f, opt);
    EXPECT_NEAR(d.U.row(0).sum(), 1, 1e-15);
    EXPECT_NEAR(d.U(0, 2), 0.4 / 0.9, 1e-15);
}

TEST(LoadCsv, ZeroNeedsPseudocount)
{
    TempDir t;
    const auto f = t.write("a.csv", "y,a,b,c\n1,0.5,0.5,0\n");
    EXPECT_NE(error_of([&] { load_compositional_csv(f); }).find("zero"), std::string::npos);
    LoadOptions opt;
    opt.pseudocount = 1e-3;
    const auto d = load_compositional_csv(f, opt);
    const Matrix X = log_transform(d.U, opt.pseudocount);
    EXPECT_TRUE(X.allFinite());
}

TEST(LoadCsv, Diagnostics)
{
    TempDir t;
    auto f = t.write("neg.csv", "y,a,b\n1,0.5,0.5\n1,1.5,-0.5\n");
    auto msg = error_of([&] { load_compositional_csv(f); });
    EXPECT_NE(msg.find("neg.csv:3:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("negative"), std::string::npos) << msg;

    f = t.write("zero.csv", "y,a,b\n1,0,0\n");
    msg = error_of([&] { load_compositional_csv(f); });
    EXPECT_NE(msg.find("all components are zero"), std::string::npos) << msg;

    f = t.write("short.csv", "y,a,b\n1,0.5,0.5\n2,1\n");
    msg = error_of([&] { load_compositional_csv(f); });
    EXPECT_NE(msg.find("short.csv:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expected 3 fields"), std::string::npos) << msg;

    f = t.write("text.csv", "y,a,b\n1,0.5,abc\n");
    msg = error_of([&] { load_compositional_csv(f); });
    EXPECT_NE(msg.find("text.csv:2:3"), std::string::npos) << msg;

    msg = error_of([&] { load_compositional_csv(t.path("missing.csv")); });
    EXPECT_NE(msg.find("missing.csv"), std::string::npos) << msg;

    f = t.write("hdr.csv", "y,a\n1,1\n");
    EXPECT_FALSE(error_of([&] { load_compositional_csv(f); }).empty());
}

TEST(LoadCsv, GroupFile)
{
    TempDir t;
    const auto f = t.write("a.csv", "y,a,b,c,d,e\n1,0.2,0.2,0.2,0.2,0.2\n");
    LoadOptions opt;
    opt.group_file = t.write("g.csv", "column_name,group_label,d_weight\na,g1,1\nb,g1,2\nc,g2,1\nd,g2,-1\ne,g2,\n");
    const auto d = load_compositional_csv(f, opt);
    EXPECT_EQ(d.groups.sizes(), (std::vector<int>{2, 3}));
    EXPECT_EQ(d.groups.d(1), 2);
    EXPECT_EQ(d.groups.d(3), -1);
    EXPECT_EQ(d.groups.d(4), 1);
    EXPECT_EQ(d.group_labels, (std::vector<std::string>{"g1", "g2"}));

    opt.group_file = t.write("g2.csv", "column_name,group_label,d_weight\na,g1,1\nb,g2,1\nc,g1,1\nd,g2,1\ne,g2,1\n");
    EXPECT_NE(error_of([&] { load_compositional_csv(f, opt); }).find("consecutive"), std::string::npos);
    opt.group_file = t.write("g3.csv", "column_name,group_label,d_weight\na,g1,1\nb,g1,1\n");
    EXPECT_NE(error_of([&] { load_compositional_csv(f, opt); }).find("'c'"), std::string::npos);
    opt.group_file = t.write("g4.csv", "name,group\na,1\n");
    EXPECT_FALSE(error_of([&] { load_compositional_csv(f, opt); }).empty());
}

TEST(LogTransform, Examples)
{
    Matrix U = Matrix::Constant(1, 3, 1.0 / 3);
    const Matrix X = log_transform(U);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(X(0, j), -std::log(3.0), 1e-15);

    Matrix Z(2, 3);
    Z << 0.5, 0.5, 0, 0.1, 0.0, 0.9;
    const Matrix Xc = log_transform(Z, 0.01);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(Xc.row(i).array().exp().sum(), 1.0, 1e-12);
    EXPECT_THROW(log_transform(Z), InputError);
    EXPECT_THROW(log_transform(Z, 0.0), InputError);
}

TEST(LogTransform, SoftmaxRoundTrip)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> U(0.01, 1);
    Matrix W(20, 6);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = U(rng);
    for (Index i = 0; i < 20; ++i) W.row(i) /= W.row(i).sum();
    EXPECT_LT((softmax_rows(log_transform(W)) - W).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LogTransform, IngestThenRoundTrip)
{
    TempDir t;
    const auto s = generate_synthetic(30, {8, 4}, 3);
    const auto f = t.path("sim.csv");
    write_compositional_csv(f, s.y, s.U);
    const auto d = load_compositional_csv(f);
    EXPECT_LT((softmax_rows(log_transform(d.U)) - s.U).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(d.y, s.y);
}

TEST(Synthetic, TrueCoefficientsSumToZero)
{
    const auto s = generate_synthetic(10, {12, 8}, 1);
    Vector expect = Vector::Zero(20);
    expect.head(8) << 1, -0.8, 0.6, 0, 0, -1.5, -0.5, 1.2;
    EXPECT_EQ(s.beta, expect);
    EXPECT_NEAR(s.beta.head(12).sum(), 0.0, 1e-15);
    EXPECT_EQ(s.groups.sizes(), (std::vector<int>{12, 8}));
    EXPECT_THROW(generate_synthetic(10, {7}, 1), InputError);
}

TEST(Synthetic, LatentMomentsMatchDesign)
{
    const int n = 10000;
    const std::vector<int> sizes{8, 4, 2, 2, 2, 3};
    const auto s = generate_synthetic(n, sizes, 42);
    const Vector eta = synthetic_mean(sizes);
    EXPECT_NEAR(eta[0], std::log(4.0), 1e-15);
    EXPECT_EQ(eta[18], 0.0);   // sixth group
    const Vector mean = s.Z.colwise().mean();
    for (Index j = 0; j < mean.size(); ++j) EXPECT_LT(std::abs(mean[j] - eta[j]), 3.0 / std::sqrt(double(n))) << j;

    const Matrix C = s.Z.rowwise() - mean.transpose();
    const Matrix cov = C.transpose() * C / (n - 1);
    for (int a = 0; a < 8; ++a) {
        for (int b = 0; b < 8; ++b) EXPECT_NEAR(cov(a, b), std::pow(0.5, std::abs(a - b)), 0.06) << a << "," << b;
    }
    EXPECT_NEAR(cov(7, 8), 0.0, 0.06);   // across blocks
}

TEST(Synthetic, DeterministicPerSeed)
{
    TempDir t;
    const auto a = generate_synthetic(20, {10}, 7);
    const auto b = generate_synthetic(20, {10}, 7);
    write_compositional_csv(t.path("a.csv"), a.y, a.U);
    write_compositional_csv(t.path("b.csv"), b.y, b.U);
    EXPECT_EQ(slurp(t.path("a.csv")), slurp(t.path("b.csv")));
    EXPECT_NE(generate_synthetic(20, {10}, 8).y, a.y);
}

TEST(PathCsv, TrivialPathHasOneRow)
{
    std::mt19937_64 rng(2);
    auto prob = fixtures::regression_problem(5, 3, 1, rng);
    prob.y.setZero();
    std::ostringstream os;
    write_path_csv(os, run_path(prob));
    EXPECT_EQ(os.str(), "kink_index,lambda,event,beta_1,beta_2,beta_3,mu_1\n0,0,init,0,0,0,\n");
}

TEST(PathCsv, RoundTripIsExact)
{
    TempDir t;
    std::mt19937_64 rng(3);
    const auto prob = fixtures::regression_problem(20, 9, 3, rng, make_builtin_loss("huber-regression", 0.5), true);
    const auto path = run_path(prob);
    write_path_csv(t.path("p.csv"), path);
    const auto back = read_path_csv(t.path("p.csv"));
    ASSERT_EQ(back.kinks.size(), path.kinks.size());
    for (std::size_t k = 0; k < path.kinks.size(); ++k) {
        EXPECT_EQ(back.kinks[k].lambda, path.kinks[k].lambda);
        EXPECT_EQ(back.kinks[k].event, path.kinks[k].event);
        EXPECT_EQ(back.kinks[k].beta, path.kinks[k].beta);
        for (Index c = 0; c < 3; ++c) {
            if (std::isnan(path.kinks[k].mu[c])) {
                EXPECT_TRUE(std::isnan(back.kinks[k].mu[c]));
            } else {
                EXPECT_EQ(back.kinks[k].mu[c], path.kinks[k].mu[c]);
            }
        }
    }
}

TEST(PathCsv, ReadErrors)
{
    TempDir t;
    auto f = t.write("bad.csv", "kink_index,lambda,event,beta_1,mu_1\n0,1,init,0\n");
    EXPECT_NE(error_of([&] { read_path_csv(f); }).find("bad.csv:2"), std::string::npos);
    f = t.write("ev.csv", "kink_index,lambda,event,beta_1,mu_1\n0,1,jump,0,\n");
    EXPECT_NE(error_of([&] { read_path_csv(f); }).find("jump"), std::string::npos);
    f = t.write("hdr.csv", "a,b\n");
    EXPECT_FALSE(error_of([&] { read_path_csv(f); }).empty());
}

TEST(PlotCsv, TwoRowsPerCoefficientForTwoKinks)
{
    SolutionPath path;
    Kink a, b;
    a.lambda = 2;
    a.beta = Vector::Zero(3);
    a.mu = Vector::Constant(1, NAN);
    b.lambda = 1;
    b.beta = Vector(3);
    b.beta << 1, -1, 0;
    b.mu = Vector::Zero(1);
    b.event = PathEvent::terminate;
    path.kinks = {a, b};
    std::ostringstream os;
    write_plot_csv(os, path, GroupStructure::single(3));
    std::istringstream in(os.str());
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 1 + 2 * 3u);
    EXPECT_EQ(rows[0], "kink_index,lambda,coefficient,group,norm_ratio,group_norm_ratio,beta");
    EXPECT_EQ(rows[1], "0,2,1,1,0,0,0");
    EXPECT_EQ(rows[5], "1,1,2,1,1,1,-1");
}

TEST(Report, Formats)
{
    SelectionReport r;
    r.points = {{2, 0, 1.5}, {1, 1, 0.25}};
    r.chosen = 1;
    std::ostringstream os;
    write_report(os, r);
    EXPECT_EQ(os.str(), "index,lambda,df,value,chosen\n0,2,0,1.5,0\n1,1,1,0.25,1\n");
    r.probabilities = {0.5, 1};
    std::ostringstream ps;
    write_report(ps, r);
    EXPECT_EQ(ps.str(), "feature,probability\n1,0.5\n2,1\n");
}

TEST(Report, UnwritableFile)
{
    SelectionReport r;
    EXPECT_THROW(write_report("/nonexistent_dir/x.csv", r), InputError);
    SolutionPath p;
    p.kinks.resize(1);
    p.kinks[0].beta = Vector::Zero(2);
    p.kinks[0].mu = Vector::Zero(1);
    EXPECT_THROW(write_path_csv("/nonexistent_dir/p.csv", p), InputError);
}
