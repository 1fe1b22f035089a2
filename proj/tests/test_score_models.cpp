#include "steinuda/score_models.hpp"

#include "test_utils.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace steinuda;
using steinuda::testing::fd_param_grads;
using steinuda::testing::max_abs_diff;

namespace {

// Trapezoid integral of exp(log_density) on [lo, hi]; quadrature oracle for
// the 1-d densities.
template <class F>
double density_mass(F&& logp, double lo, double hi, int steps) {
  const double h = (hi - lo) / steps;
  double acc = 0.5 * (std::exp(logp(lo)) + std::exp(logp(hi)));
  for (int i = 1; i < steps; ++i) acc += std::exp(logp(lo + i * h));
  return acc * h;
}

GmmModel two_component_model() {
  GmmModel m;
  m.weights = Vec(2);
  m.weights << 0.4, 0.6;
  m.means = {Vec(2), Vec(2)};
  m.means[0] << -1.0, 0.5;
  m.means[1] << 2.0, -0.3;
  m.vars = {Vec(2), Vec(2)};
  m.vars[0] << 0.7, 1.2;
  m.vars[1] << 0.5, 0.9;
  return m;
}

}  // namespace

TEST_CASE("gaussian fit: hand-computed moments on three points", "[scores]") {
  Mat z(3, 2);
  z << 0, 0,
       2, 0,
       1, 3;
  const GaussianModel g = fit_gaussian(z);
  REQUIRE(g.mean[0] == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(g.mean[1] == Catch::Approx(1.0).margin(1e-14));
  // 1/m covariance: var_x = (1 + 1 + 0)/3, var_y = (1 + 1 + 4)/3, cov = (0 + 0 + 0)/3
  REQUIRE(g.cov(0, 0) == Catch::Approx(2.0 / 3.0).margin(1e-12));
  REQUIRE(g.cov(1, 1) == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(g.cov(0, 1) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE_THROWS_AS(fit_gaussian(Mat(z.topRows(1))), DataError);
}

TEST_CASE("gaussian fit: recovers moments from samples", "[scores]") {
  RngStream rng(100);
  Vec mu(2);
  mu << 1.0, -2.0;
  Mat a(2, 2);
  a << 1.0, 0.0,
       0.6, 0.8;
  const int n = 5000;
  Mat z(n, 2);
  for (int i = 0; i < n; ++i) z.row(i) = (mu + a * rng.normal_vec(2)).transpose();
  const GaussianModel g = fit_gaussian(z);
  const Mat sigma = a * a.transpose();
  // moment standard errors are O(1/sqrt(n)) ~ 0.014; allow 5 sigma
  REQUIRE((g.mean - mu).cwiseAbs().maxCoeff() < 0.08);
  REQUIRE((g.cov - sigma).cwiseAbs().maxCoeff() < 0.12);
}

TEST_CASE("gaussian fit: constant data falls back to jitter", "[scores]") {
  Mat z = Mat::Ones(10, 3) * 2.5;
  const GaussianModel g = fit_gaussian(z);
  REQUIRE(g.factor.jitter > 0.0);
  REQUIRE(g.cov.isApprox(g.factor.jitter * Mat::Identity(3, 3), 1e-12));
  const Vec s = gaussian_score(g, Vec::Zero(3));
  REQUIRE(s.allFinite());
}

TEST_CASE("gaussian score: standard normal gives -z, general case matches FD", "[scores]") {
  const GaussianModel std2 =
      GaussianModel::from_moments(Vec::Zero(2), Mat::Identity(2, 2));
  Vec z(2);
  z << 0.7, -1.3;
  REQUIRE((gaussian_score(std2, z) + z).cwiseAbs().maxCoeff() < 1e-14);

  RngStream rng(101);
  Mat b = rng.normal_mat(3, 3);
  const Mat sigma = b * b.transpose() + Mat::Identity(3, 3);
  const GaussianModel g = GaussianModel::from_moments(rng.normal_vec(3), sigma);
  const Vec x = rng.normal_vec(3);
  const Vec fd = finite_diff_grad(
      [&](const Vec& v) { return gaussian_log_density(g, v); }, x, 1e-5);
  REQUIRE((gaussian_score(g, x) - fd).cwiseAbs().maxCoeff() < 1e-8);

  const Mat jac = gaussian_score_jacobian(g);
  for (int c = 0; c < 3; ++c) {
    const Vec fd_col = finite_diff_grad(
        [&](const Vec& v) { return gaussian_score(g, v)[c]; }, x, 1e-5);
    REQUIRE((jac.row(c).transpose() - fd_col).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("gaussian density: pinned value and unit mass", "[scores]") {
  const GaussianModel std1 =
      GaussianModel::from_moments(Vec::Zero(1), Mat::Identity(1, 1));
  Vec z(1);
  z << 0.9;
  REQUIRE(gaussian_log_density(std1, z) ==
          Catch::Approx(-0.5 * kLog2Pi - 0.5 * 0.81).margin(1e-13));

  const GaussianModel g = GaussianModel::from_moments(
      Vec::Constant(1, 0.3), Mat::Constant(1, 1, 0.8));
  const double mass = density_mass(
      [&](double x) { return gaussian_log_density(g, Vec::Constant(1, x)); }, -8.0, 8.0,
      4000);
  REQUIRE(mass == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("gaussian sampling: moments match the model", "[scores]") {
  RngStream rng(102);
  Mat a(2, 2);
  a << 0.9, 0.0,
       -0.4, 1.1;
  const GaussianModel g =
      GaussianModel::from_moments((Vec(2) << 0.5, -1.0).finished(), a * a.transpose());
  const int n = 20000;
  Mat draws(n, 2);
  for (int i = 0; i < n; ++i) draws.row(i) = gaussian_sample(g, rng).transpose();
  const GaussianModel refit = fit_gaussian(draws);
  REQUIRE((refit.mean - g.mean).cwiseAbs().maxCoeff() < 0.05);
  REQUIRE((refit.cov - g.cov).cwiseAbs().maxCoeff() < 0.08);
}

TEST_CASE("gmm responsibilities: simplex and degenerate single component", "[scores]") {
  const GmmModel m = two_component_model();
  RngStream rng(103);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec g = gmm_responsibilities(m, rng.normal_vec(2));
    REQUIRE(g.sum() == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(g.minCoeff() >= 0.0);
  }

  GmmModel single;
  single.weights = Vec::Constant(1, 1.0);
  single.means = {(Vec(2) << 0.4, -0.6).finished()};
  single.vars = {(Vec(2) << 0.9, 1.4).finished()};
  const GaussianModel diag = GaussianModel::from_moments(
      single.means[0], single.vars[0].asDiagonal());
  const Vec z = rng.normal_vec(2);
  REQUIRE((gmm_score(single, z) - gaussian_score(diag, z)).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(gmm_log_density(single, z) ==
          Catch::Approx(gaussian_log_density(diag, z)).margin(1e-12));
}

TEST_CASE("gmm score: symmetry zero and FD against the log-density", "[scores]") {
  GmmModel sym;
  sym.weights = Vec::Constant(2, 0.5);
  sym.means = {Vec::Constant(1, -1.5), Vec::Constant(1, 1.5)};
  sym.vars = {Vec::Constant(1, 0.8), Vec::Constant(1, 0.8)};
  REQUIRE(std::abs(gmm_score(sym, Vec::Zero(1))[0]) < 1e-14);

  const GmmModel m = two_component_model();
  RngStream rng(104);
  for (int rep = 0; rep < 5; ++rep) {
    const Vec z = rng.normal_vec(2);
    const Vec fd = finite_diff_grad(
        [&](const Vec& v) { return gmm_log_density(m, v); }, z, 1e-5);
    REQUIRE((gmm_score(m, z) - fd).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("gmm score jacobian: symmetric and matches FD of the score", "[scores]") {
  const GmmModel m = two_component_model();
  RngStream rng(105);
  const Vec z = rng.normal_vec(2);
  const Mat jac = gmm_score_jacobian(m, z);
  REQUIRE((jac - jac.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  for (int c = 0; c < 2; ++c) {
    const Vec fd = finite_diff_grad(
        [&](const Vec& v) { return gmm_score(m, v)[c]; }, z, 1e-5);
    REQUIRE((jac.row(c).transpose() - fd).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("gmm density: unit mass in one dimension", "[scores]") {
  GmmModel m;
  m.weights = Vec(2);
  m.weights << 0.3, 0.7;
  m.means = {Vec::Constant(1, -2.0), Vec::Constant(1, 1.0)};
  m.vars = {Vec::Constant(1, 0.5), Vec::Constant(1, 1.5)};
  const double mass = density_mass(
      [&](double x) { return gmm_log_density(m, Vec::Constant(1, x)); }, -12.0, 12.0,
      6000);
  REQUIRE(mass == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("gmm sampling: mixture mean matches", "[scores]") {
  const GmmModel m = two_component_model();
  RngStream rng(106);
  Vec acc = Vec::Zero(2);
  const int n = 20000;
  for (int i = 0; i < n; ++i) acc += gmm_sample(m, rng);
  const Vec mean = acc / n;
  const Vec expected = 0.4 * m.means[0] + 0.6 * m.means[1];
  REQUIRE((mean - expected).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("gmm em: monotone likelihood and cluster recovery", "[scores]") {
  RngStream rng(107);
  const int per = 400;
  Mat z(2 * per, 2);
  for (int i = 0; i < per; ++i) {
    z.row(i) = (Vec(2) << -2.0 + 0.4 * rng.normal(), 0.3 * rng.normal()).finished();
    z.row(per + i) = (Vec(2) << 2.0 + 0.4 * rng.normal(), 0.3 * rng.normal()).finished();
  }
  std::vector<double> trace;
  RngStream fit_rng(108);
  const GmmModel m = fit_gmm_em(z, 2, 50, fit_rng, &trace);
  REQUIRE(trace.size() >= 2);
  for (std::size_t i = 1; i < trace.size(); ++i)
    REQUIRE(trace[i] >= trace[i - 1] - 1e-10);

  // means land on the two clusters, in either order
  const double m0 = m.means[0][0], m1 = m.means[1][0];
  REQUIRE(std::abs(std::min(m0, m1) + 2.0) < 0.15);
  REQUIRE(std::abs(std::max(m0, m1) - 2.0) < 0.15);
  REQUIRE(std::abs(m.weights[0] - 0.5) < 0.1);
  REQUIRE(m.weights.sum() == Catch::Approx(1.0).margin(1e-12));

  REQUIRE_THROWS_AS(fit_gmm_em(Mat(z.topRows(1)), 2, 10, fit_rng), DataError);
}

TEST_CASE("gmm em: single component reduces to the diagonal gaussian fit", "[scores]") {
  RngStream rng(109);
  const Mat z = rng.normal_mat(200, 2);
  RngStream fit_rng(110);
  const GmmModel m = fit_gmm_em(z, 1, 50, fit_rng);
  const GaussianModel g = fit_gaussian(z);
  REQUIRE((m.means[0] - g.mean).cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE(std::abs(m.vars[0][0] - g.cov(0, 0)) < 1e-10);
  REQUIRE(std::abs(m.vars[0][1] - g.cov(1, 1)) < 1e-10);
}

TEST_CASE("gmm em: variance floor engages on degenerate clusters", "[scores]") {
  Mat z(40, 1);
  for (int i = 0; i < 20; ++i) {
    z(i, 0) = -1.0;
    z(20 + i, 0) = 1.0;
  }
  RngStream rng(111);
  const GmmModel m = fit_gmm_em(z, 2, 50, rng);
  REQUIRE(m.vars[0][0] >= GmmModel::kVarFloor);
  REQUIRE(m.vars[1][0] >= GmmModel::kVarFloor);
  REQUIRE(std::min(m.vars[0][0], m.vars[1][0]) ==
          Catch::Approx(GmmModel::kVarFloor).margin(1e-18));
}

TEST_CASE("gmm sgd step: matches finite-difference gradients in each block", "[scores]") {
  const GmmModel m = two_component_model();
  RngStream rng(112);
  Mat z(6, 2);
  for (int i = 0; i < 6; ++i) z.row(i) = rng.normal_vec(2).transpose();
  const int batch = static_cast<int>(z.rows());

  auto mean_ll = [&](const GmmModel& g) {
    double s = 0;
    for (int i = 0; i < batch; ++i) s += gmm_log_density(g, z.row(i).transpose());
    return s / batch;
  };

  const double lr = 1e-4;
  const GmmModel out = gmm_sgd_step(m, z, lr);
  REQUIRE(mean_ll(out) > mean_ll(m));
  REQUIRE(out.weights.sum() == Catch::Approx(1.0).margin(1e-12));

  // recover the analytic gradients from the parameter increments and compare
  // with central differences of the mean log-likelihood
  const double h = 1e-6;
  for (int i = 0; i < m.components(); ++i) {
    for (int j = 0; j < m.dim(); ++j) {
      GmmModel p = m, q = m;
      p.means[i][j] += h;
      q.means[i][j] -= h;
      const double fd = (mean_ll(p) - mean_ll(q)) / (2 * h);
      const double analytic = (out.means[i][j] - m.means[i][j]) / lr;
      REQUIRE(analytic == Catch::Approx(fd).margin(1e-5));

      GmmModel pv = m, qv = m;
      pv.vars[i][j] = std::exp(std::log(m.vars[i][j]) + h);
      qv.vars[i][j] = std::exp(std::log(m.vars[i][j]) - h);
      const double fd_lv = (mean_ll(pv) - mean_ll(qv)) / (2 * h);
      const double analytic_lv =
          (std::log(out.vars[i][j]) - std::log(m.vars[i][j])) / lr;
      REQUIRE(analytic_lv == Catch::Approx(fd_lv).margin(1e-5));
    }
  }

  // weight logits: softmax is shift-invariant, so compare centered increments
  Vec alpha_inc(m.components());
  for (int i = 0; i < m.components(); ++i)
    alpha_inc[i] = (std::log(out.weights[i]) - std::log(m.weights[i])) / lr;
  alpha_inc.array() -= alpha_inc.mean();
  Vec fd_alpha(m.components());
  for (int i = 0; i < m.components(); ++i) {
    auto with_alpha = [&](double delta) {
      GmmModel g = m;
      Vec a = m.weights.array().log().matrix();
      a[i] += delta;
      const Vec e = (a.array() - a.maxCoeff()).exp().matrix();
      g.weights = e / e.sum();
      return mean_ll(g);
    };
    fd_alpha[i] = (with_alpha(h) - with_alpha(-h)) / (2 * h);
  }
  fd_alpha.array() -= fd_alpha.mean();
  REQUIRE((alpha_inc - fd_alpha).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("vae elbo: pinned value for an identity model", "[scores]") {
  // encoder [I; 0] gives mu = z, logvar = 0; identity decoder reconstructs
  // exactly at eps = 0
  VaeModel v;
  Layer enc;
  enc.w = Mat::Zero(4, 2);
  enc.w(0, 0) = 1.0;
  enc.w(1, 1) = 1.0;
  enc.b = Vec::Zero(4);
  enc.act = Act::Identity;
  v.encoder.layers.push_back(enc);
  Layer dec;
  dec.w = Mat::Identity(2, 2);
  dec.b = Vec::Zero(2);
  dec.act = Act::Identity;
  v.decoder.layers.push_back(dec);
  v.latent_dim = 2;
  v.mc_samples = 1;

  RngStream rng(120);
  const Mat z = rng.normal_mat(5, 2);
  const Mat eps = Mat::Zero(5, 2);
  const double expected = -kLog2Pi - 0.5 * z.rowwise().squaredNorm().mean();
  REQUIRE(vae_elbo(v, z, eps) == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("vae elbo gradients: match finite differences on both nets", "[scores]") {
  RngStream rng(121);
  VaeModel v = make_vae(3, 6, 2, rng.split(0));
  const Mat z = rng.normal_mat(4, 3);
  const Mat eps = rng.normal_mat(4, 2);
  const VaeElboGrads g = vae_elbo_grads(v, z, eps);
  REQUIRE(g.elbo == Catch::Approx(vae_elbo(v, z, eps)).margin(1e-12));

  const MlpGrads fd_enc = fd_param_grads(
      v.encoder,
      [&](const Mlp& net) {
        VaeModel w = v;
        w.encoder = net;
        return vae_elbo(w, z, eps);
      },
      1e-6);
  REQUIRE(max_abs_diff(g.encoder, fd_enc) < 1e-7);

  const MlpGrads fd_dec = fd_param_grads(
      v.decoder,
      [&](const Mlp& net) {
        VaeModel w = v;
        w.decoder = net;
        return vae_elbo(w, z, eps);
      },
      1e-6);
  REQUIRE(max_abs_diff(g.decoder, fd_dec) < 1e-7);
}

TEST_CASE("vae elbo step: ascends on its own noise draw", "[scores]") {
  RngStream rng(122);
  VaeModel v = make_vae(3, 8, 2, rng.split(0));
  const Mat z = rng.normal_mat(16, 3);

  RngStream noise_a(500), noise_b(500);
  const Mat eps = noise_a.normal_mat(16, 2);
  const double before = vae_elbo(v, z, eps);
  VaeModel stepped = v;
  const double reported = vae_elbo_step(stepped, z, 1e-3, noise_b);
  REQUIRE(reported == Catch::Approx(before).margin(1e-12));
  REQUIRE(vae_elbo(stepped, z, eps) > before);
}

TEST_CASE("vae score: single-draw oracle and variant difference", "[scores]") {
  RngStream rng(123);
  VaeModel v = make_vae(2, 5, 2, rng.split(0));
  v.mc_samples = 1;
  const Vec z = rng.normal_vec(2);
  const Mat eps0 = Mat::Zero(1, 2);

  // with eps = 0 the single posterior draw is xi = mu(z)
  const auto enc = mlp_eval_vec(v.encoder, z);
  const Vec mu = enc.head(2);
  const Vec expected = mlp_eval_vec(v.decoder, mu) - z;
  REQUIRE((vae_score_frozen(v, z, eps0) - expected).cwiseAbs().maxCoeff() < 1e-12);

  VaeModel paper = v;
  paper.variant = VaeModel::ScoreVariant::Paper;
  const Vec ps = vae_score_frozen(paper, z, eps0);
  const double w = std::exp(-2.0 * kLog2Pi - expected.squaredNorm());
  REQUIRE((ps - w * expected).cwiseAbs().maxCoeff() < 1e-14);
  REQUIRE((ps - expected).cwiseAbs().maxCoeff() > 1e-6);  // variants differ
}

TEST_CASE("vae score jacobian: matches FD for both variants", "[scores]") {
  RngStream rng(124);
  for (auto variant : {VaeModel::ScoreVariant::Corrected, VaeModel::ScoreVariant::Paper}) {
    VaeModel v = make_vae(2, 5, 2, rng.split(7), variant, 3);
    const Vec z = rng.normal_vec(2);
    const Mat eps = rng.normal_mat(3, 2);
    const Mat jac = vae_score_jacobian_frozen(v, z, eps);
    for (int c = 0; c < 2; ++c) {
      const Vec fd = finite_diff_grad(
          [&](const Vec& x) { return vae_score_frozen(v, x, eps)[c]; }, z, 1e-5);
      REQUIRE((jac.row(c).transpose() - fd).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
}

TEST_CASE("score eval: frozen noise is consistent across calls", "[scores]") {
  RngStream rng(125);
  const ScoreModel vae = make_vae(2, 5, 2, rng.split(0));
  RngStream noise(9);
  const ScoreEval eval(vae, &noise);
  const Vec z = rng.normal_vec(2);
  REQUIRE(eval.score(z) == eval.score(z));

  const ScoreModel gauss =
      GaussianModel::from_moments(Vec::Zero(2), Mat::Identity(2, 2));
  const ScoreEval geval(gauss);
  REQUIRE((geval.score(z) + z).cwiseAbs().maxCoeff() < 1e-14);
  const Mat zs = rng.normal_mat(4, 2);
  const Mat sm = geval.score_matrix(zs);
  REQUIRE((sm.row(2).transpose() - geval.score(zs.row(2).transpose())).cwiseAbs().maxCoeff() ==
          0.0);

  REQUIRE_THROWS_AS(ScoreEval(vae), DataError);
  REQUIRE_THROWS_AS(log_density(vae, z), DataError);
}

TEST_CASE("score model serialization: bitwise round trips", "[scores]") {
  RngStream rng(126);

  Mat b = rng.normal_mat(2, 2);
  const ScoreModel gauss = GaussianModel::from_moments(
      rng.normal_vec(2), Mat(b * b.transpose() + Mat::Identity(2, 2)));
  const ScoreModel gauss2 =
      score_model_from_json(nlohmann::json::parse(score_model_to_json(gauss).dump()));
  REQUIRE(std::get<GaussianModel>(gauss2).mean == std::get<GaussianModel>(gauss).mean);
  REQUIRE(std::get<GaussianModel>(gauss2).cov == std::get<GaussianModel>(gauss).cov);

  const ScoreModel gmm = two_component_model();
  const ScoreModel gmm2 =
      score_model_from_json(nlohmann::json::parse(score_model_to_json(gmm).dump()));
  REQUIRE(std::get<GmmModel>(gmm2).weights == std::get<GmmModel>(gmm).weights);
  REQUIRE(std::get<GmmModel>(gmm2).means[1] == std::get<GmmModel>(gmm).means[1]);
  REQUIRE(std::get<GmmModel>(gmm2).vars[0] == std::get<GmmModel>(gmm).vars[0]);

  const ScoreModel vae = make_vae(2, 4, 2, rng.split(1), VaeModel::ScoreVariant::Paper, 5);
  const ScoreModel vae2 =
      score_model_from_json(nlohmann::json::parse(score_model_to_json(vae).dump()));
  const auto& va = std::get<VaeModel>(vae);
  const auto& vb = std::get<VaeModel>(vae2);
  REQUIRE(vb.latent_dim == va.latent_dim);
  REQUIRE(vb.mc_samples == va.mc_samples);
  REQUIRE(vb.variant == va.variant);
  REQUIRE(vb.encoder.layers[0].w == va.encoder.layers[0].w);
  REQUIRE(vb.decoder.layers[1].w == va.decoder.layers[1].w);

  REQUIRE_THROWS_AS(score_model_from_json(nlohmann::json::parse(R"({"type":"what"})")),
                    DataError);
  REQUIRE_THROWS_AS(score_model_from_json(nlohmann::json::parse(
                        R"({"type":"gmm","weights":[0.5,0.4],
                            "means":[[0],[1]],"variances":[[1],[1]]})")),
                    DataError);
}

TEST_CASE("sampling dispatch: all families draw finite vectors", "[scores]") {
  RngStream rng(127);
  const std::vector<ScoreModel> models{
      GaussianModel::from_moments(Vec::Zero(2), Mat::Identity(2, 2)),
      two_component_model(),
      make_vae(2, 4, 2, rng.split(0)),
  };
  for (const ScoreModel& m : models) {
    const Mat draws = sample_matrix(m, 8, rng);
    REQUIRE(draws.rows() == 8);
    REQUIRE(draws.cols() == 2);
    REQUIRE(draws.allFinite());
  }
}
