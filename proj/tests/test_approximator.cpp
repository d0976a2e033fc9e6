#include <doctest.h>

#include <map>
#include <numeric>

#include "rpr/classifier.hpp"
#include "rpr/env.hpp"
#include "rpr/error.hpp"
#include "rpr/mlp.hpp"

using namespace rpr;

namespace {

Observation vec(double x, double y) { return Observation::vector({x, y}); }

FitConfig kind(ModelKind k) {
  FitConfig cfg;
  cfg.kind = k;
  return cfg;
}

double sum(const std::vector<double>& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

/// Random vector rows, three classes, two actions.
LabeledSaDataset random_rows(Rng& rng, std::size_t n) {
  LabeledSaDataset d;
  d.class_count = 3;
  d.action_count = 2;
  for (std::size_t i = 0; i < n; ++i) {
    d.add(vec(rng.uniform(-1, 1), rng.uniform(-1, 1)), rng.index(2), i < 3 ? i : rng.index(3));
  }
  return d;
}

}  // namespace

TEST_CASE("tabular reward classifier on column world") {
  const auto env = make_env(EnvSpec{});
  const auto data = sample_trajectories(env, uniform_policy(4), 200, 50, 3);
  LabeledSaDataset rows;
  rows.class_count = 2;
  rows.action_count = 4;
  for (const auto& t : data.transitions()) rows.add(data.instance(t.state), t.action, t.reward > 0.5 ? 1 : 0);
  const auto f = fit_classifier(rows, FitConfig{});
  const auto p = f.predict_distribution(Observation::discrete(1 * 4 + 2), 3);
  CHECK(p[1] == 1.0);
  CHECK(f.predict_class(Observation::discrete(6), 3) == 1);
  CHECK(f.predict_class(Observation::discrete(6), 2) == 0);
  CHECK(f.predict_class(Observation::discrete(5), 3) == 0);
}

TEST_CASE("tabular frequencies match a direct count") {
  Rng rng(11);
  LabeledSaDataset rows;
  rows.class_count = 4;
  rows.action_count = 3;
  std::map<std::pair<std::size_t, ActionId>, std::vector<double>> counts;
  for (int i = 0; i < 500; ++i) {
    const std::size_t s = rng.index(6), a = rng.index(3), y = rng.index(4);
    const bool masked = rng.uniform() < 0.2;
    rows.add(Observation::discrete(s), a, y, masked);
    if (masked) continue;
    auto& c = counts[{s, a}];
    c.resize(4, 0.0);
    c[y] += 1.0;
  }
  const auto f = fit_classifier(rows, FitConfig{});
  for (std::size_t s = 0; s < 6; ++s) {
    for (ActionId a = 0; a < 3; ++a) {
      const auto p = f.predict_distribution(Observation::discrete(s), a);
      auto it = counts.find({s, a});
      for (std::size_t y = 0; y < 4; ++y) {
        const double expect = it == counts.end() ? 0.25 : it->second[y] / sum(it->second);
        CHECK(p[y] == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("unseen tabular pair falls back to uniform") {
  LabeledSaDataset rows;
  rows.class_count = 4;
  rows.action_count = 2;
  rows.add(Observation::discrete(0), 0, 2);
  const auto f = fit_classifier(rows, FitConfig{});
  for (double v : f.predict_distribution(Observation::discrete(0), 1)) CHECK(v == 0.25);
  for (double v : f.predict_distribution(Observation::discrete(9), 0)) CHECK(v == 0.25);
  CHECK(f.predict_class(Observation::discrete(9), 0) == 0);
}

TEST_CASE("argmax ties go to the lowest class") {
  LabeledSaDataset rows;
  rows.class_count = 3;
  rows.action_count = 1;
  rows.add(Observation::discrete(0), 0, 2);
  rows.add(Observation::discrete(0), 0, 1);
  rows.add(Observation::discrete(1), 0, 2);
  rows.add(Observation::discrete(1), 0, 2);
  rows.add(Observation::discrete(1), 0, 0);
  const auto f = fit_classifier(rows, FitConfig{});
  CHECK(f.predict_class(Observation::discrete(0), 0) == 1);
  CHECK(f.predict_class(Observation::discrete(1), 0) == 2);
  CHECK(f.predict_class(Observation::discrete(7), 0) == 0);
}

TEST_CASE("knn with k = 1 returns the training label") {
  Rng rng(5);
  const auto rows = random_rows(rng, 60);
  auto cfg = kind(ModelKind::kKnn);
  cfg.k = 1;
  const auto f = fit_classifier(rows, cfg);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto p = f.predict_distribution(rows.states[i], rows.actions[i]);
    CHECK(p[rows.labels[i]] == 1.0);
  }
}

TEST_CASE("knn vote matches brute force") {
  Rng rng(6);
  const auto rows = random_rows(rng, 80);
  auto cfg = kind(ModelKind::kKnn);
  cfg.k = 7;
  const auto f = fit_classifier(rows, cfg);
  for (int q = 0; q < 40; ++q) {
    const auto query = vec(rng.uniform(-1, 1), rng.uniform(-1, 1));
    const ActionId a = rng.index(2);
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows.actions[i] != a) continue;
      const auto v = rows.states[i].values();
      const auto w = query.values();
      d.push_back({(v[0] - w[0]) * (v[0] - w[0]) + (v[1] - w[1]) * (v[1] - w[1]), i});
    }
    std::sort(d.begin(), d.end());
    std::vector<double> expect(3, 0.0);
    for (std::size_t j = 0; j < 7; ++j) expect[rows.labels[d[j].second]] += 1.0 / 7.0;
    const auto p = f.predict_distribution(query, a);
    for (std::size_t c = 0; c < 3; ++c) CHECK(p[c] == doctest::Approx(expect[c]).epsilon(1e-12));
  }
}

TEST_CASE("knn distance ties go to the lowest row") {
  LabeledSaDataset rows;
  rows.class_count = 2;
  rows.action_count = 1;
  rows.add(vec(1, 0), 0, 1);
  rows.add(vec(-1, 0), 0, 0);
  auto cfg = kind(ModelKind::kKnn);
  cfg.k = 1;
  const auto f = fit_classifier(rows, cfg);
  CHECK(f.predict_class(vec(0, 0), 0) == 1);
}

TEST_CASE("knn skips masked rows and falls back for empty actions") {
  LabeledSaDataset rows;
  rows.class_count = 2;
  rows.action_count = 2;
  rows.add(vec(0, 0), 0, 1, true);
  rows.add(vec(5, 5), 0, 0);
  rows.add(vec(-20, -20), 0, 1);
  auto cfg = kind(ModelKind::kKnn);
  cfg.k = 1;
  const auto f = fit_classifier(rows, cfg);
  CHECK(f.predict_class(vec(0, 0), 0) == 0);
  CHECK(f.predict_distribution(vec(0, 0), 1) == std::vector<double>{0.5, 0.5});
}

TEST_CASE("predictions are probability vectors") {
  Rng rng(7);
  const auto rows = random_rows(rng, 120);
  auto mlp = kind(ModelKind::kMlp);
  mlp.hidden = {8};
  mlp.epochs = 3;
  for (const auto& cfg : {kind(ModelKind::kKnn), mlp}) {
    const auto f = fit_classifier(rows, cfg);
    for (int q = 0; q < 50; ++q) {
      const auto p = f.predict_distribution(vec(rng.uniform(-3, 3), rng.uniform(-3, 3)), rng.index(2));
      REQUIRE(p.size() == 3);
      CHECK(sum(p) == doctest::Approx(1.0).epsilon(1e-9));
      for (double v : p) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("predict_batch agrees with single queries") {
  Rng rng(8);
  const auto rows = random_rows(rng, 60);
  auto mlp = kind(ModelKind::kMlp);
  mlp.hidden = {6, 5};
  const auto f = fit_classifier(rows, mlp);
  const auto m = f.predict_batch(rows.states, 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto p = f.predict_distribution(rows.states[i], 1);
    for (std::size_t c = 0; c < 3; ++c) CHECK(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) == p[c]);
  }
}

TEST_CASE("mlp separates a linearly separable task") {
  Rng rng(9);
  LabeledSaDataset rows;
  rows.class_count = 2;
  rows.action_count = 2;
  for (int i = 0; i < 400; ++i) {
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    const ActionId a = rng.index(2);
    if (std::abs(x) < 0.1) continue;
    rows.add(vec(x, y), a, (x > 0) != (a == 1) ? 1 : 0);
  }
  auto cfg = kind(ModelKind::kMlp);
  cfg.hidden = {16};
  cfg.epochs = 60;
  cfg.learning_rate = 0.01;
  const auto f = fit_classifier(rows, cfg);
  CHECK(f.diagnostics().accuracy >= 0.98);
  CHECK(f.predict_class(vec(0.8, 0.0), 0) == 1);
  CHECK(f.predict_class(vec(0.8, 0.0), 1) == 0);
  CHECK(f.predict_class(vec(-0.8, 0.3), 0) == 0);
}

TEST_CASE("fits are deterministic per seed") {
  Rng rng(10);
  const auto rows = random_rows(rng, 100);
  auto cfg = kind(ModelKind::kMlp);
  cfg.hidden = {7};
  cfg.seed = 3;
  CHECK(fit_classifier(rows, cfg).serialize() == fit_classifier(rows, cfg).serialize());
  cfg.seed = 4;
  CHECK(fit_classifier(rows, cfg).serialize() != fit_classifier(rows, kind(ModelKind::kMlp)).serialize());
}

TEST_CASE("serialization round trips every kind") {
  Rng rng(12);
  const auto rows = random_rows(rng, 50);
  LabeledSaDataset discrete;
  discrete.class_count = 2;
  discrete.action_count = 1;
  discrete.add(Observation::discrete(3), 0, 1);
  discrete.add(Observation::discrete(4), 0, 0);
  auto mlp = kind(ModelKind::kMlp);
  mlp.hidden = {4};
  const std::vector<Classifier> fits = {fit_classifier(discrete, FitConfig{}), fit_classifier(rows, kind(ModelKind::kKnn)),
                                        fit_classifier(rows, mlp)};
  for (const auto& f : fits) {
    const auto back = Classifier::deserialize(f.serialize());
    CHECK(back.kind() == f.kind());
    CHECK(back.class_count() == f.class_count());
    CHECK(back.serialize() == f.serialize());
  }
  CHECK(Classifier::deserialize(fits[0].serialize()).predict_class(Observation::discrete(3), 0) == 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 1; k < 3; ++k) {
      CHECK(Classifier::deserialize(fits[k].serialize()).predict_distribution(rows.states[i], 0) ==
            fits[k].predict_distribution(rows.states[i], 0));
    }
  }
  CHECK_THROWS_AS(Classifier::deserialize("{}"), IoError);
  CHECK_THROWS_AS(Classifier::deserialize("not json"), IoError);
}

TEST_CASE("fit errors") {
  LabeledSaDataset rows;
  rows.class_count = 4;
  rows.action_count = 1;
  rows.add(Observation::discrete(0), 0, 0);
  rows.add(Observation::discrete(1), 0, 3, true);
  CHECK_THROWS_WITH_AS(fit_classifier(rows, FitConfig{}), doctest::Contains("class 3"), FitError);

  LabeledSaDataset masked;
  masked.class_count = 2;
  masked.add(Observation::discrete(0), 0, 0, true);
  CHECK_THROWS_AS(fit_classifier(masked, FitConfig{}), FitError);
  CHECK_THROWS_AS(fit_classifier(LabeledSaDataset{.class_count = 2}, FitConfig{}), FitError);

  LabeledSaDataset discrete;
  discrete.class_count = 1;
  discrete.add(Observation::discrete(0), 0, 0);
  CHECK_THROWS_AS(fit_classifier(discrete, kind(ModelKind::kKnn)), FitError);

  LabeledSaDataset bad_label;
  bad_label.class_count = 1;
  bad_label.add(Observation::discrete(0), 0, 1);
  CHECK_THROWS_AS(fit_classifier(bad_label, FitConfig{}), FitError);

  LabeledSaDataset mixed;
  mixed.class_count = 1;
  mixed.add(Observation::discrete(0), 0, 0);
  mixed.add(vec(0, 0), 0, 0);
  CHECK_THROWS_AS(fit_classifier(mixed, FitConfig{}), FitError);
}

TEST_CASE("queries with the wrong variant are rejected") {
  LabeledSaDataset rows;
  rows.class_count = 2;
  rows.add(vec(0, 1), 0, 1);
  auto cfg = kind(ModelKind::kKnn);
  cfg.k = 1;
  const auto f = fit_classifier(rows, cfg);
  CHECK_THROWS_AS(f.predict_distribution(Observation::discrete(0), 0), ConfigError);
  CHECK_THROWS_AS(f.predict_distribution(Observation::vector({0, 1, 2}), 0), ConfigError);
  CHECK_THROWS_AS(f.predict_distribution(vec(0, 1), 1), ConfigError);
  CHECK_THROWS_AS(Classifier{}.predict_distribution(vec(0, 1), 0), ConfigError);
}

TEST_CASE("fit config validation") {
  auto cfg = kind(ModelKind::kMlp);
  cfg.epochs = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("epochs"), ConfigError);
  cfg = kind(ModelKind::kMlp);
  cfg.hidden = {4, 0};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("hidden"), ConfigError);
  cfg = kind(ModelKind::kKnn);
  cfg.k = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("k"), ConfigError);
  CHECK(parse_model_kind("mlp") == ModelKind::kMlp);
  CHECK_THROWS_AS(parse_model_kind("svm"), ConfigError);
}

TEST_CASE("warm start keeps compatible hidden layers as the starting point") {
  Rng rng(13);
  const auto rows = random_rows(rng, 80);
  auto cfg = kind(ModelKind::kMlp);
  cfg.hidden = {5};
  cfg.epochs = 1;
  cfg.learning_rate = 1e-12;
  const auto donor = fit_classifier(rows, cfg);
  cfg.seed = 99;
  const auto warm = fit_classifier(rows, cfg, &donor);
  const auto cold = fit_classifier(rows, cfg);
  const auto& wl = warm.network()->layers()[0].weight;
  CHECK((wl - donor.network()->layers()[0].weight).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((wl - cold.network()->layers()[0].weight).cwiseAbs().maxCoeff() > 1e-3);

  auto other = cfg;
  other.hidden = {6};
  const auto mismatched = fit_classifier(rows, other, &donor);
  CHECK(mismatched.network()->layers()[0].weight.rows() == 6);
}

TEST_CASE("mlp gradient matches central differences") {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    Mlp net(3, {4, 3}, 3, rng);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(5, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-1, 1);
    const std::vector<std::size_t> y = {0, 2, 1, 1, 0};
    std::vector<Mlp::Layer> g;
    const double loss = net.loss_and_gradient(x, y, g);
    CHECK(loss == doctest::Approx(net.loss(x, y)).epsilon(1e-12));
    const Eigen::VectorXd analytic = Mlp::flatten(g);
    const Eigen::VectorXd theta = net.flat_parameters();
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Eigen::VectorXd p = theta;
      p(k) += 1e-6;
      net.set_flat_parameters(p);
      const double up = net.loss(x, y);
      p(k) -= 2e-6;
      net.set_flat_parameters(p);
      const double down = net.loss(x, y);
      CHECK(analytic(k) == doctest::Approx((up - down) / 2e-6).epsilon(1e-4).scale(1.0));
    }
    net.set_flat_parameters(theta);
  }
}
