#include <cmath>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "tsup/data.hpp"

using namespace tsup;
using namespace tsup::data;

namespace {

const std::filesystem::path kFixtures = TSUP_FIXTURE_DIR;

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tsup_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

TimeSeriesTable ramp_table(std::size_t length, std::size_t channels) {
  TimeSeriesTable t;
  for (std::size_t i = 0; i < length; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%08zu", i);
    t.timestamps.emplace_back(buf);
  }
  for (std::size_t c = 0; c < channels; ++c) {
    t.channel_names.push_back("c" + std::to_string(c));
    Vec v(length);
    for (std::size_t i = 0; i < length; ++i) v[i] = static_cast<double>(i) + 1000.0 * static_cast<double>(c);
    t.channels.push_back(v);
  }
  return t;
}

double mean_of(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double biased_std(const Vec& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

DataError::Kind load_error_kind(const std::string& file, std::size_t* line = nullptr) {
  try {
    load_csv(kFixtures / file);
  } catch (const DataError& e) {
    if (line) *line = e.line();
    return e.kind();
  }
  FAIL("expected a DataError for " << file);
  return DataError::Kind::Empty;
}

}  // namespace

TEST_CASE("load_csv: fixtures") {
  const auto t = load_csv(kFixtures / "small.csv");
  CHECK(t.length() == 3);
  CHECK(t.num_channels() == 2);
  CHECK(t.channel_names == std::vector<std::string>{"a", "b"});
  CHECK(t.channels[0] == Vec{1.0, -0.5, 0.2});
  CHECK(t.channels[1] == Vec{2.5, 3.0, 4.25});

  const auto ett = load_csv(kFixtures / "etth1_head.csv");
  CHECK(ett.num_channels() == 7);
  CHECK(ett.channel_names.back() == "OT");
  CHECK(ett.channels[6][1] == 27.787);
}

TEST_CASE("load_csv: error kinds") {
  std::size_t line = 0;
  CHECK(load_error_kind("nan_line5.csv", &line) == DataError::Kind::BadValue);
  CHECK(line == 5);
  try {
    load_csv(kFixtures / "nan_line5.csv");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":5:") != std::string::npos);
  }
  CHECK(load_error_kind("ragged.csv", &line) == DataError::Kind::Ragged);
  CHECK(line == 3);
  CHECK(load_error_kind("non_monotone.csv", &line) == DataError::Kind::NonMonotone);
  CHECK(line == 4);
  CHECK(load_error_kind("one_column.csv") == DataError::Kind::TooFewColumns);
  CHECK(load_error_kind("does_not_exist.csv") == DataError::Kind::MissingFile);
}

TEST_CASE("write_csv round-trips bit-exactly") {
  Rng rng(5);
  const auto t = synth_sines(rng, 50, 3, 2, 0.3);
  const auto path = scratch("roundtrip.csv");
  write_csv(t, path);
  const auto back = load_csv(path);
  CHECK(back.timestamps == t.timestamps);
  CHECK(back.channel_names == t.channel_names);
  CHECK(back.channels == t.channels);
}

TEST_CASE("chronological_split") {
  WindowSpec small{4, 2, 2, 1};
  SUBCASE("length 100") {
    const auto s = chronological_split(ramp_table(100, 1), small);
    CHECK(s.train.length() == 70);
    CHECK(s.val.length() == 10);
    CHECK(s.test.length() == 20);
  }
  SUBCASE("ETTh1 length: floor, remainder to test") {
    const auto s = chronological_split(ramp_table(12194, 1), WindowSpec{});
    CHECK(s.train.length() == 8535);
    CHECK(s.val.length() == 1219);
    CHECK(s.test.length() == 2440);
  }
  SUBCASE("too short names the split") {
    try {
      chronological_split(ramp_table(10, 1), WindowSpec{8, 4, 4, 2});
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("test") != std::string::npos);
    }
  }
  SUBCASE("bad ratios") {
    CHECK_THROWS_AS(chronological_split(ramp_table(100, 1), small, {0.7, 0.2, 0.2}), ContractError);
    CHECK_THROWS_AS(chronological_split(ramp_table(100, 1), small, {1.0, 0.0, 0.0}), ContractError);
  }
  SUBCASE("parts concatenate to the original") {
    for (std::size_t len : {41u, 100u, 211u, 999u}) {
      const auto t = ramp_table(len, 2);
      const auto s = chronological_split(t, small, {0.6, 0.15, 0.25});
      TimeSeriesTable joined = s.train;
      for (const auto* part : {&s.val, &s.test}) {
        joined.timestamps.insert(joined.timestamps.end(), part->timestamps.begin(), part->timestamps.end());
        for (std::size_t c = 0; c < 2; ++c)
          joined.channels[c].insert(joined.channels[c].end(), part->channels[c].begin(), part->channels[c].end());
      }
      CHECK(joined.timestamps == t.timestamps);
      CHECK(joined.channels == t.channels);
    }
  }
}

TEST_CASE("synth_sines") {
  SUBCASE("single noiseless component is periodic") {
    Rng rng(9);
    const auto t = synth_sines(rng, 2000, 1, 1, 0.0);
    const Vec& x = t.channels[0];
    // Recover the period as the lag in [12, 168] with the highest autocorrelation.
    auto autocorr = [&](std::size_t lag) {
      double s = 0.0;
      const std::size_t n = x.size() - 168;
      for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i + lag];
      return s / static_cast<double>(n);
    };
    std::size_t best = 12;
    for (std::size_t lag = 12; lag <= 168; ++lag)
      if (autocorr(lag) > autocorr(best)) best = lag;
    CHECK(std::abs(autocorr(best) - autocorr(0)) < 1e-6);
  }
  SUBCASE("deterministic") {
    Rng a(2021), b(2021);
    const auto ta = synth_sines(a, 300, 3, 3, 0.1);
    const auto tb = synth_sines(b, 300, 3, 3, 0.1);
    CHECK(ta.channels == tb.channels);
    CHECK(ta.timestamps == tb.timestamps);
  }
  SUBCASE("zero mean over long series") {
    Rng rng(2021);
    const auto t = synth_sines(rng, 1024, 7, 3, 0.1);
    CHECK(t.num_channels() == 7);
    for (const Vec& c : t.channels) CHECK(std::abs(mean_of(c)) < 0.1);
  }
  SUBCASE("amplitude bound and timestamps ordered") {
    Rng rng(4);
    const auto t = synth_sines(rng, 500, 2, 2, 0.0);
    for (const Vec& c : t.channels)
      for (double v : c) CHECK(std::abs(v) <= 3.0);
    for (std::size_t i = 1; i < t.length(); ++i) CHECK(t.timestamps[i - 1] < t.timestamps[i]);
  }
  SUBCASE("preconditions") {
    Rng rng(1);
    CHECK_THROWS_AS(synth_sines(rng, 10, 1, 0, 0.0), ContractError);
  }
}

TEST_CASE("revin") {
  SUBCASE("[2,4,6]") {
    RevinStats st;
    const Vec x{2, 4, 6};
    const Vec z = revin_normalize(x, st);
    CHECK(std::abs(mean_of(z)) < 1e-12);
    CHECK(biased_std(z) == doctest::Approx(1.0).epsilon(1e-12));
    const Vec back = revin_denormalize(z, st);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-12);
  }
  SUBCASE("constant window") {
    RevinStats st;
    const Vec z = revin_normalize(Vec{5, 5, 5}, st);
    CHECK(z == Vec{0, 0, 0});
    CHECK(st.std == kRevinStdFloor);
    CHECK(st.mean == 5.0);
  }
  SUBCASE("affine inverse") {
    CHECK(revin_denormalize(Vec{0, 1}, RevinStats{10, 2}) == Vec{10, 12});
  }
  SUBCASE("random windows round-trip") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      Vec x(2 + rng.below(400));
      const double scale = std::pow(10.0, rng.uniform(-3, 4));
      const double shift = rng.uniform(-1e3, 1e3);
      for (double& v : x) v = shift + scale * rng.normal();
      RevinStats st;
      const Vec z = revin_normalize(x, st);
      CHECK(std::abs(mean_of(z)) < 1e-9);
      CHECK(std::abs(biased_std(z) - 1.0) < 1e-6);
      const Vec back = revin_denormalize(z, st);
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) <= 1e-12 * std::max(1.0, std::abs(x[i])));
    }
  }
  SUBCASE("too short") {
    RevinStats st;
    CHECK_THROWS_AS(revin_normalize(Vec{1.0}, st), ContractError);
  }
}

TEST_CASE("patchify") {
  SUBCASE("geometries") {
    CHECK(WindowSpec{336, 96, 16, 8}.num_patches() == 41);
    CHECK(WindowSpec{104, 24, 24, 2}.num_patches() == 41);
    Vec w(336);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i);
    const Mat p = patchify(w, WindowSpec{336, 96, 16, 8});
    CHECK(p.rows() == 41);
    CHECK(p.cols() == 16);
    CHECK(p(1, 0) == 8.0);
    CHECK(p(40, 15) == 335.0);
  }
  SUBCASE("L = P gives the window") {
    const Vec w{1, 2, 3, 4};
    const Mat p = patchify(w, WindowSpec{4, 1, 4, 3});
    CHECK(p.rows() == 1);
    CHECK(p == Mat{{1, 2, 3, 4}});
  }
  SUBCASE("end padding replicates the last value") {
    const Vec w{1, 2, 3, 4, 5, 6, 7};
    const Mat p = patchify(w, WindowSpec{7, 1, 4, 2});
    CHECK(p.rows() == 3);
    CHECK(p == Mat{{1, 2, 3, 4}, {3, 4, 5, 6}, {5, 6, 7, 7}});
  }
  SUBCASE("P > L") {
    CHECK_THROWS_AS(patchify(Vec{1, 2}, WindowSpec{2, 1, 3, 1}), ContractError);
    CHECK_THROWS_AS(WindowSpec({2, 1, 3, 1}).validate(), ContractError);
  }
  SUBCASE("flatten reconstructs the padded input when S ≤ P") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      WindowSpec s;
      s.patch = 1 + rng.below(20);
      s.stride = 1 + rng.below(s.patch);
      s.input_len = s.patch + rng.below(60);
      Vec w(s.input_len);
      for (double& v : w) v = rng.normal();
      const Mat p = patchify(w, s);
      CHECK(p.rows() == s.num_patches());
      const Vec flat = flatten_patches(p, s.stride);
      const std::size_t padded = s.patch + (p.rows() - 1) * s.stride;
      REQUIRE(flat.size() == padded);
      for (std::size_t i = 0; i < padded; ++i) CHECK(flat[i] == w[std::min(i, w.size() - 1)]);
    }
  }
}

TEST_CASE("extract_windows: channel independent") {
  const WindowSpec spec{8, 4, 4, 2};
  const auto one = extract_windows(ramp_table(40, 1), spec);
  const auto many = extract_windows(ramp_table(40, 5), spec);
  CHECK(one.size() == 40 - 12 + 1);
  CHECK(many.size() == 5 * one.size());
  for (const auto& w : many) {
    CHECK(w.input.size() == 8);
    CHECK(w.target.size() == 4);
    const double base = 1000.0 * static_cast<double>(w.channel) + static_cast<double>(w.start);
    CHECK(w.input.front() == base);
    CHECK(w.target.back() == base + 11.0);
  }
  CHECK(extract_windows(ramp_table(40, 2), spec, 4).size() == 2 * 8);
  CHECK(extract_windows(ramp_table(11, 2), spec).empty());
}
