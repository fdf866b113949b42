#include <doctest.h>

#include <cmath>

#include "bsem/dataset.hpp"
#include "bsem/error.hpp"
#include "support.hpp"

using namespace bsem;

TEST_CASE("bundled political democracy file loads as 75 by 11") {
  const Dataset ds = load_csv(testsup::data_file("political_democracy.csv"));
  CHECK(ds.columns.size() == 11);
  REQUIRE(!ds.values.empty());
  CHECK(ds.values.size() == 75);
  CHECK(ds.bad_cells.empty());
  CHECK(ds.group.empty());

  const BoundData bd = bind_data(ds, {"y1", "y2", "x1"});
  CHECK(bd.n() == 75);
  CHECK(bd.p() == 3);
  CHECK(bd.groups.count() == 1);
  CHECK(bd.n_dropped == 0);
}

TEST_CASE("grouped file yields levels in order of first appearance") {
  const Dataset ds = load_csv(testsup::data_file("holzinger_swineford.csv"), "school");
  CHECK(ds.columns.size() == 10);
  const BoundData bd = bind_data(ds, {"x1", "x4", "x7"});
  REQUIRE(bd.groups.count() == 2);
  CHECK(bd.groups.levels[0] == "Pasteur");
  CHECK(bd.groups.levels[1] == "Grant-White");
  CHECK(bd.group_n[0] == 156);
  CHECK(bd.group_n[1] == 145);
  CHECK(bd.n() == 301);
}

TEST_CASE("group moments match direct computation") {
  testsup::TempFile f("moments",
                      "g,a,b\n"
                      "u,1,2\n"
                      "u,3,6\n"
                      "u,5,4\n"
                      "v,10,0\n"
                      "v,14,2\n");
  const Dataset ds = load_csv(f.path, "g");
  const BoundData bd = bind_data(ds, {"a", "b"});
  REQUIRE(bd.groups.count() == 2);

  const Eigen::VectorXd m0 = bd.group_mean(0);
  CHECK(m0[0] == doctest::Approx(3.0));
  CHECK(m0[1] == doctest::Approx(4.0));

  // ml covariance divides by n
  const Eigen::MatrixXd s0 = bd.group_cov(0, true);
  CHECK(s0(0, 0) == doctest::Approx(8.0 / 3.0));
  CHECK(s0(1, 1) == doctest::Approx(8.0 / 3.0));
  CHECK(s0(0, 1) == doctest::Approx(4.0 / 3.0));

  const Eigen::MatrixXd s0u = bd.group_cov(0, false);
  CHECK(s0u(0, 0) == doctest::Approx(4.0));

  const Eigen::VectorXd m1 = bd.group_mean(1);
  CHECK(m1[0] == doctest::Approx(12.0));
  CHECK(m1[1] == doctest::Approx(1.0));
}

TEST_CASE("non numeric cell in a bound column names row and column") {
  testsup::TempFile f("badcell",
                      "y1,y2\n"
                      "1.0,2.0\n"
                      "oops,3.0\n"
                      "4.0,5.0\n");
  const Dataset ds = load_csv(f.path);
  REQUIRE(ds.bad_cells.size() == 1);
  CHECK(ds.bad_cells[0].row == 2);
  CHECK(ds.bad_cells[0].column == "y1");
  CHECK(ds.bad_cells[0].token == "oops");

  try {
    bind_data(ds, {"y1", "y2"});
    FAIL("expected an error for the non-numeric cell");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("y1") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("oops") != std::string::npos);
  }

  // unbound columns may carry junk without consequence
  const BoundData only_y2 = bind_data(ds, {"y2"});
  CHECK(only_y2.n() == 3);
}

TEST_CASE("missing cells drop the case with a warning") {
  testsup::TempFile f("missing",
                      "y1,y2\n"
                      "1.0,2.0\n"
                      "NA,3.0\n"
                      "4.0,\n"
                      "6.0,7.0\n");
  const Dataset ds = load_csv(f.path);
  const BoundData bd = bind_data(ds, {"y1", "y2"});
  CHECK(bd.n() == 2);
  CHECK(bd.n_dropped == 2);
  REQUIRE(!bd.warnings.empty());
  CHECK(bd.warnings[0].find("2") != std::string::npos);
}

TEST_CASE("binding errors") {
  testsup::TempFile f("errors", "y1,y2\n1,2\n");
  const Dataset ds = load_csv(f.path);
  CHECK_THROWS_AS(bind_data(ds, {"y1", "zz"}), Error);

  testsup::TempFile g("allmiss", "y1,y2\nNA,1\nNA,2\n");
  CHECK_THROWS_AS(bind_data(load_csv(g.path), {"y1", "y2"}), Error);

  CHECK_THROWS_AS(load_csv("/tmp/does_not_exist_bsem.csv"), Error);
  CHECK_THROWS_AS(load_csv(f.path, "absent_group"), Error);
}

TEST_CASE("write then reload preserves values and grouping") {
  const Dataset ds = load_csv(testsup::data_file("holzinger_swineford.csv"), "school");
  const BoundData bd = bind_data(ds, {"x1", "x2", "x3"});

  testsup::TempFile out("roundtrip");
  write_csv(out.path, bd, "school");
  const Dataset ds2 = load_csv(out.path, "school");
  const BoundData bd2 = bind_data(ds2, {"x1", "x2", "x3"});

  REQUIRE(bd2.n() == bd.n());
  CHECK(bd2.groups == bd.groups);
  CHECK((bd2.y - bd.y).cwiseAbs().maxCoeff() == 0.0);
}
