#include <catch2/catch_amalgamated.hpp>

#include "steinuda/datasets.hpp"
#include "steinuda/inference.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

using namespace steinuda;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string temp_csv(const char* tag) {
  return std::string("/tmp/steinuda_") + tag + ".csv";
}

void write_lines(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

}  // namespace

TEST_CASE("noiseless unrotated moons lie exactly on two half circles", "[datasets]") {
  RngStream rng(90);
  const Dataset ds = make_two_moons(40, 0.0, 0.0, rng);
  REQUIRE(ds.n() == 40);
  REQUIRE(ds.dim() == 2);
  int count0 = 0, count1 = 0;
  for (int i = 0; i < 40; ++i) {
    const double x = ds.features(i, 0), y = ds.features(i, 1);
    if (ds.labels[i] == 0) {
      ++count0;
      CHECK(std::abs(std::hypot(x, y) - 1.0) <= 1e-12);
      CHECK(y >= -1e-12);  // upper half circle
    } else {
      ++count1;
      CHECK(std::abs(std::hypot(x - 1.0, y - 0.5) - 1.0) <= 1e-12);
      CHECK(y <= 0.5 + 1e-12);  // lower half circle
    }
  }
  CHECK(count0 == 20);
  CHECK(count1 == 20);
  CHECK(ds.classes() == 2);
}

TEST_CASE("a full turn reproduces the unrotated moons bitwise", "[datasets]") {
  RngStream a(91), b(91), c(91);
  const Dataset base = make_two_moons(60, 0.1, 0.0, a);
  const Dataset turned = make_two_moons(60, 0.1, 360.0, b);
  const Dataset twice = make_two_moons(60, 0.1, 720.0, c);
  for (int i = 0; i < 60; ++i)
    for (int j = 0; j < 2; ++j) {
      REQUIRE(base.features(i, j) == turned.features(i, j));
      REQUIRE(base.features(i, j) == twice.features(i, j));
    }
}

TEST_CASE("rotation is a rigid motion about the centroid", "[datasets]") {
  RngStream a(92), b(92);
  const Dataset base = make_two_moons(50, 0.05, 0.0, a);
  const Dataset rot = make_two_moons(50, 0.05, 30.0, b);
  const Vec c0 = base.features.colwise().mean().transpose();
  const Vec c1 = rot.features.colwise().mean().transpose();
  CHECK((c0 - c1).norm() < 1e-12);
  for (int i = 0; i < 50; i += 7)
    for (int j = i + 1; j < 50; j += 9) {
      const double d0 = (base.features.row(i) - base.features.row(j)).norm();
      const double d1 = (rot.features.row(i) - rot.features.row(j)).norm();
      CHECK(d0 == Catch::Approx(d1).margin(1e-12));
    }
  // and it actually moved the points
  CHECK((base.features - rot.features).cwiseAbs().maxCoeff() > 0.1);
}

TEST_CASE("two moons validates its arguments", "[datasets]") {
  RngStream rng(93);
  CHECK_THROWS_AS(make_two_moons(41, 0.1, 0.0, rng), DataError);
  CHECK_THROWS_AS(make_two_moons(0, 0.1, 0.0, rng), DataError);
  CHECK_THROWS_AS(make_two_moons(40, -0.1, 0.0, rng), DataError);
}

TEST_CASE("blob shift stratifies labels and separates under large shift", "[datasets]") {
  RngStream rng(94);
  const auto [source, target] = make_blob_shift(200, 2, 5.0, 1.0, 4, rng);
  REQUIRE(source.n() == 200);
  REQUIRE(target.n() == 200);
  CHECK(source.domain == Domain::Source);
  CHECK(target.domain == Domain::Target);
  int counts[4] = {0, 0, 0, 0};
  for (int y : source.labels) ++counts[y];
  for (int c = 0; c < 4; ++c) CHECK(counts[c] == 50);

  // well-separated domains: leave-one-out 1-NN domain classification is
  // near perfect (closest cross-domain centers about 7 sigma apart)
  const auto [s2, t2] = make_blob_shift(200, 2, 7.0, 1.0, 2, rng);
  Mat all(400, 2);
  all.topRows(200) = s2.features;
  all.bottomRows(200) = t2.features;
  int correct = 0;
  for (int i = 0; i < 400; ++i) {
    double best = 1e300;
    int arg = -1;
    for (int j = 0; j < 400; ++j) {
      if (j == i) continue;
      const double dist = (all.row(i) - all.row(j)).squaredNorm();
      if (dist < best) {
        best = dist;
        arg = j;
      }
    }
    if ((arg < 200) == (i < 200)) ++correct;
  }
  CHECK(static_cast<double>(correct) / 400.0 >= 0.99);
}

TEST_CASE("blob shift with zero shift and unit scale matches in law", "[datasets][mc]") {
  RngStream rng(95);
  const auto [source, target] = make_blob_shift(400, 2, 0.0, 1.0, 2, rng);
  const TestResult res = mmd_permutation_test({KernelFamily::Rbf, 1.5}, source.features,
                                              target.features, 0.01, 99, rng.split(1));
  INFO("p = " << res.p_value);
  CHECK_FALSE(res.reject);

  CHECK_THROWS_AS(make_blob_shift(10, 2, 0.0, 1.0, 1, rng), DataError);
  CHECK_THROWS_AS(make_blob_shift(7, 2, 0.0, 1.0, 2, rng), DataError);
  CHECK_THROWS_AS(make_blob_shift(8, 2, 0.0, 0.0, 2, rng), DataError);
}

TEST_CASE("subsampling honours percent, minimum, and determinism", "[datasets]") {
  RngStream gen(96);
  Dataset big;
  big.features = gen.normal_mat(3200, 3);
  big.labels.resize(3200);
  for (int i = 0; i < 3200; ++i) big.labels[i] = i % 5;
  big.domain = Domain::Target;

  RngStream r1(97), r2(97);
  const Dataset tiny = subsample_target(big, 0.001, 32, r1);
  CHECK(tiny.n() == 32);
  CHECK(tiny.domain == Domain::Target);
  const Dataset tiny2 = subsample_target(big, 0.001, 32, r2);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 3; ++j) REQUIRE(tiny.features(i, j) == tiny2.features(i, j));

  RngStream r3(98);
  const Dataset all = subsample_target(big, 1.0, 1, r3);
  REQUIRE(all.n() == 3200);
  for (int i = 0; i < 3200; ++i) {
    CHECK(all.features(i, 0) == big.features(i, 0));
    CHECK(all.labels[i] == big.labels[i]);
  }

  // kept rows preserve original relative order and carry labels
  RngStream r4(99);
  const Dataset part = subsample_target(big, 0.25, 1, r4);
  CHECK(part.n() == 800);
  int prev = -1;
  for (int i = 0; i < part.n(); ++i) {
    int orig = -1;
    for (int k = prev + 1; k < 3200; ++k)
      if (big.features.row(k) == part.features.row(i)) {
        orig = k;
        break;
      }
    REQUIRE(orig > prev);
    CHECK(part.labels[i] == big.labels[orig]);
    prev = orig;
  }

  RngStream r5(100);
  CHECK_THROWS_AS(subsample_target(big, 0.0, 1, r5), DataError);
  CHECK_THROWS_AS(subsample_target(big, 1.5, 1, r5), DataError);
  CHECK_THROWS_AS(subsample_target(big, 0.5, 0, r5), DataError);
  Dataset empty;
  empty.features.resize(0, 3);
  CHECK_THROWS_AS(subsample_target(empty, 0.5, 1, r5), DataError);
}

TEST_CASE("csv io round-trips features bitwise", "[datasets]") {
  RngStream rng(101);
  Dataset ds;
  ds.features = rng.normal_mat(20, 3);
  ds.features(0, 0) = 1e300;
  ds.features(1, 1) = 1e-300;
  ds.features(2, 2) = -0.0;
  ds.features(3, 0) = 0.1 + 0.2;  // not representable exactly; stress %.17g
  ds.labels.resize(20);
  for (int i = 0; i < 20; ++i) ds.labels[i] = i % 3;
  ds.domain = Domain::Target;

  const std::string path = temp_csv("roundtrip");
  write_dataset_csv(path, ds);
  const Dataset back = read_dataset_csv(path);
  REQUIRE(back.n() == 20);
  REQUIRE(back.dim() == 3);
  CHECK(back.domain == Domain::Target);
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 3; ++j) REQUIRE(back.features(i, j) == ds.features(i, j));
    CHECK(back.labels[i] == ds.labels[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("csv io handles unlabeled data", "[datasets]") {
  RngStream rng(102);
  Dataset ds;
  ds.features = rng.normal_mat(5, 2);
  ds.domain = Domain::Source;
  const std::string path = temp_csv("unlabeled");
  write_dataset_csv(path, ds);

  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "f0,f1,label,domain");
  CHECK_THAT(first, ContainsSubstring(",,source"));

  const Dataset back = read_dataset_csv(path);
  CHECK_FALSE(back.labeled());
  CHECK(back.n() == 5);
  std::remove(path.c_str());
}

TEST_CASE("csv reader rejects malformed files with located errors", "[datasets]") {
  const std::string path = temp_csv("malformed");

  write_lines(path, "f0,x1,label,domain\n0.0,1.0,0,source\n");
  CHECK_THROWS_WITH(read_dataset_csv(path),
                    ContainsSubstring("expected column 'f1', got 'x1'"));

  write_lines(path, "f0,f1,tag,domain\n0.0,1.0,0,source\n");
  CHECK_THROWS_WITH(read_dataset_csv(path), ContainsSubstring("expected column 'label'"));

  write_lines(path, "f0,f1,label,domain\n0.0,1.0,0,source\n0.5,2\n");
  CHECK_THROWS_WITH(read_dataset_csv(path),
                    ContainsSubstring("row 3 has 2 fields, expected 4"));

  write_lines(path, "f0,f1,label,domain\n0.0,oops,0,source\n");
  CHECK_THROWS_WITH(read_dataset_csv(path),
                    ContainsSubstring("row 2 column f1: 'oops' is not a number"));

  write_lines(path, "f0,f1,label,domain\n0.0,1.0,1.5,source\n");
  CHECK_THROWS_WITH(read_dataset_csv(path),
                    ContainsSubstring("label '1.5' is not a non-negative integer"));

  write_lines(path, "f0,f1,label,domain\n0.0,1.0,0,west\n");
  CHECK_THROWS_WITH(read_dataset_csv(path),
                    ContainsSubstring("domain must be 'source' or 'target'"));

  write_lines(path, "f0,f1,label,domain\n0.0,1.0,0,source\n0.0,1.0,1,target\n");
  CHECK_THROWS_WITH(read_dataset_csv(path), ContainsSubstring("mixed domains"));

  write_lines(path, "f0,f1,label,domain\n0.0,1.0,0,source\n0.0,1.0,,source\n");
  CHECK_THROWS_WITH(read_dataset_csv(path),
                    ContainsSubstring("all present or all empty"));

  write_lines(path, "f0,f1,label,domain\n");
  CHECK_THROWS_WITH(read_dataset_csv(path), ContainsSubstring("no data rows"));

  write_lines(path, "");
  CHECK_THROWS_AS(read_dataset_csv(path), DataError);

  CHECK_THROWS_WITH(read_dataset_csv("/tmp/steinuda_does_not_exist.csv"),
                    ContainsSubstring("cannot open"));
  std::remove(path.c_str());
}
