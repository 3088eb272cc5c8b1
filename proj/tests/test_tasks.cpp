#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>

#include <doctest.h>

#include "otafl/errors.hpp"
#include "otafl/io.hpp"
#include "otafl/numerics.hpp"
#include "otafl/tasks.hpp"

using namespace otafl;

namespace {

std::string tmp_path(const char* name) {
  return std::string("/tmp/otafl_test_") + name;
}

void put_u32_be(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

// Minimal IDX pair: `count` images of rows x cols incrementing pixels, labels 0..count-1.
void write_idx_pair(const std::string& img_path, const std::string& lab_path, int count,
                    int rows, int cols, int label_count) {
  std::string img;
  put_u32_be(img, 0x00000803u);
  put_u32_be(img, static_cast<std::uint32_t>(count));
  put_u32_be(img, static_cast<std::uint32_t>(rows));
  put_u32_be(img, static_cast<std::uint32_t>(cols));
  for (int i = 0; i < count * rows * cols; ++i)
    img.push_back(static_cast<char>(i % 256));
  write_text_file(img_path, img);

  std::string lab;
  put_u32_be(lab, 0x00000801u);
  put_u32_be(lab, static_cast<std::uint32_t>(label_count));
  for (int i = 0; i < label_count; ++i) lab.push_back(static_cast<char>(i % 10));
  write_text_file(lab_path, lab);
}

}  // namespace

TEST_CASE("global objective decomposes into weighted locals") {
  RandomStream s1(31), s2(32);
  const auto ridge = make_ridge_task(s1, 4, 10, 6, 0.1, 0.05);
  const auto net = make_nonconvex_task(s2, 3, 12, 5, 7, 3, 0.4);
  const TrainingTask* tasks[] = {static_cast<const TrainingTask*>(ridge.get()), net.get()};

  RandomStream ws(33);
  for (const TrainingTask* task : tasks) {
    for (int trial = 0; trial < 5; ++trial) {
      const Vec w = gaussian_vector(ws, task->dim(), 1.0);
      double want_loss = 0.0;
      Vec want_grad(task->dim(), 0.0);
      double weight_sum = 0.0;
      for (int k = 0; k < task->devices(); ++k) {
        want_loss += task->device_weight(k) * task->local_loss(k, w);
        axpy(task->device_weight(k), task->local_grad(k, w), want_grad);
        weight_sum += task->device_weight(k);
      }
      CHECK(weight_sum == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(task->loss(w) == doctest::Approx(want_loss).epsilon(1e-10));
      const Vec g = task->grad(w);
      CHECK(norm2(sub(g, want_grad)) <= 1e-10 * std::max(1.0, norm2(g)));
    }
  }
}

TEST_CASE("ridge smoothness and strong convexity constants are exact envelopes") {
  RandomStream s(41);
  const auto task = make_ridge_task(s, 3, 20, 8, 0.1, 0.2);
  const double L = task->constants().L;
  const double M = task->constants().M;
  REQUIRE(L > 0.0);
  REQUIRE(M > 0.0);
  CHECK(M <= L);
  CHECK(M >= 0.2);  // at least the ridge coefficient

  RandomStream ws(42);
  for (int trial = 0; trial < 30; ++trial) {
    const Vec w = gaussian_vector(ws, task->dim(), 1.0);
    const Vec v = gaussian_vector(ws, task->dim(), 1.0);
    const double dw = norm2(sub(w, v));
    const double dg = norm2(sub(task->grad(w), task->grad(v)));
    CHECK(dg <= L * dw * (1.0 + 1e-10));
    CHECK(dg >= M * dw * (1.0 - 1e-10));
  }
}

TEST_CASE("ridge optimum satisfies the first-order condition and both envelopes") {
  RandomStream s(43);
  const auto task = make_ridge_task(s, 5, 15, 10, 0.2, 0.1);
  REQUIRE(task->optimum().has_value());
  const Vec& w_star = task->optimum()->w_star;
  const double f_star = task->optimum()->f_star;

  CHECK(norm2(task->grad(w_star)) <= 1e-8 * std::max(1.0, task->constants().L));
  CHECK(task->loss(w_star) == doctest::Approx(f_star).epsilon(1e-12));

  const double L = task->constants().L;
  const double M = task->constants().M;
  RandomStream ws(44);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec v = gaussian_vector(ws, task->dim(), 1.0);
    const double d2 = dot(sub(v, w_star), sub(v, w_star));
    const double fv = task->loss(v);
    CHECK(fv >= f_star + 0.5 * M * d2 * (1.0 - 1e-9));
    CHECK(fv <= f_star + 0.5 * L * d2 * (1.0 + 1e-9));
  }
}

TEST_CASE("smooth net gradient matches central finite differences") {
  RandomStream s(51);
  const auto task = make_nonconvex_task(s, 2, 15, 4, 6, 3, 0.0);
  RandomStream ws(52);
  Vec w = gaussian_vector(ws, task->dim(), 0.25);
  const Vec g = task->grad(w);
  const double gn = norm2(g);
  REQUIRE(gn > 0.0);

  const double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < task->dim(); i += 3) {  // every third coordinate is plenty
    Vec wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    const double fd = (task->loss(wp) - task->loss(wm)) / (2.0 * h);
    worst = std::max(worst, std::fabs(fd - g[i]));
  }
  CHECK(worst <= 1e-5 * std::max(1.0, gn));
}

TEST_CASE("partition is balanced, disjoint, and covers the dataset") {
  RandomStream s(61);
  Dataset data = make_blob_dataset(s, 103, 4, 5, 1.5, 0.6);
  RandomStream ps(62);
  const DataPartition part = partition_data(ps, data, 4, 0.0);
  REQUIRE(part.size() == 4);

  std::set<std::size_t> seen;
  for (const auto& idx : part) {
    CHECK(idx.size() >= 103 / 4);
    CHECK(idx.size() <= 103 / 4 + 1);
    for (std::size_t i : idx) {
      CHECK(i < data.size());
      CHECK(seen.insert(i).second);  // no duplicates across devices
    }
  }
  CHECK(seen.size() == data.size());
}

TEST_CASE("skewed partitions concentrate labels per device") {
  RandomStream s(63);
  Dataset data = make_blob_dataset(s, 400, 3, 4, 1.5, 0.6);

  const auto purity = [&](double skew) {
    RandomStream ps(64);
    const DataPartition part = partition_data(ps, data, 8, skew);
    double total = 0.0;
    for (const auto& idx : part) {
      std::vector<int> counts(static_cast<std::size_t>(data.classes), 0);
      for (std::size_t i : idx) counts[static_cast<std::size_t>(data.labels[i])]++;
      total += static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
               static_cast<double>(idx.size());
    }
    return total / 8.0;
  };

  const double iid = purity(0.0);
  const double sorted = purity(1.0);
  CHECK(sorted > iid + 0.2);  // sorted shards are far purer than iid splits
  // Label counts are multinomial, so shard boundaries straddle classes; the
  // fully sorted split is near-pure but not exactly pure.
  CHECK(sorted > 0.85);
}

TEST_CASE("measure_theta flags aligned and undefined angles") {
  RandomStream s(71);
  const auto task = make_ridge_task(s, 3, 10, 5, 0.05, 0.1);
  RandomStream ws(72);
  const Vec w = gaussian_vector(ws, task->dim(), 1.0);
  const Vec angles = measure_theta(*task, w);
  REQUIRE(angles.size() == 3);
  for (double a : angles) {
    if (std::isnan(a)) continue;
    CHECK(a >= 0.0);
    CHECK(a <= M_PI);
  }
  // At the optimum the global gradient vanishes: every angle is undefined.
  const Vec at_opt = measure_theta(*task, task->optimum()->w_star);
  for (double a : at_opt) CHECK(std::isnan(a));
}

TEST_CASE("idx loader reads a crafted pair and scales pixels") {
  const std::string img = tmp_path("img.idx");
  const std::string lab = tmp_path("lab.idx");
  write_idx_pair(img, lab, 3, 2, 2, 3);
  const Dataset data = load_idx_dataset(img, lab);
  CHECK(data.size() == 3);
  CHECK(data.feature_dim() == 4);
  CHECK(data.is_classification());
  CHECK(data.classes == 3);
  CHECK(data.labels[2] == 2);
  CHECK(data.features[0][0] == doctest::Approx(0.0));
  CHECK(data.features[0][1] == doctest::Approx(1.0 / 255.0));
  CHECK(data.features[1][0] == doctest::Approx(4.0 / 255.0));
  for (const auto& x : data.features)
    for (double v : x) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
}

TEST_CASE("idx loader reports precise byte offsets for malformed files") {
  const std::string img = tmp_path("img2.idx");
  const std::string lab = tmp_path("lab2.idx");

  // Bad image magic.
  write_idx_pair(img, lab, 2, 2, 2, 2);
  std::string broken = read_text_file(img);
  broken[3] = 0x07;
  write_text_file(img, broken);
  try {
    load_idx_dataset(img, lab);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset() == 0);
  }

  // Count mismatch between images and labels.
  write_idx_pair(img, lab, 2, 2, 2, 5);
  try {
    load_idx_dataset(img, lab);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset() == 4);
  }

  // Truncated image payload.
  write_idx_pair(img, lab, 2, 2, 2, 2);
  std::string full = read_text_file(img);
  write_text_file(img, full.substr(0, full.size() - 3));
  try {
    load_idx_dataset(img, lab);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset() == full.size() - 3);
  }

  // Truncated header.
  write_text_file(img, std::string("\x00\x00\x08", 3));
  CHECK_THROWS_AS(load_idx_dataset(img, lab), FormatError);

  CHECK_THROWS_AS(load_idx_dataset(tmp_path("missing.idx"), lab), FormatError);
}

TEST_CASE("calibration fixes G from the warm-up and bounds ridge smoothness") {
  RandomStream s(81);
  const auto task = make_ridge_task(s, 4, 20, 6, 0.1, 0.1);
  const double L_true = task->constants().L;

  RandomStream ws(82);
  const Vec w1 = gaussian_vector(ws, task->dim(), 1.0);
  RandomStream cs(83);
  const CalibrationReport rep = calibrate_constants(*task, w1, EtaSchedule::power_law(0.75),
                                                    30, cs, /*estimate_smoothness=*/true);

  CHECK(rep.gradient_bound == doctest::Approx(1.5 * rep.max_device_grad_norm).epsilon(1e-12));
  CHECK(task->constants().G == doctest::Approx(rep.gradient_bound));
  CHECK(rep.pairs_sampled >= 10000);
  // The factor-2 margin puts the estimate at or above the exact constant
  // without drifting past twice its value.
  CHECK(rep.smoothness >= L_true * (1.0 - 1e-9));
  CHECK(rep.smoothness <= 2.0 * L_true * (1.0 + 1e-9));
  CHECK(task->constants().L == doctest::Approx(rep.smoothness));

  // Ridge keeps its exact L when estimation is off.
  RandomStream s2(81);
  const auto task2 = make_ridge_task(s2, 4, 20, 6, 0.1, 0.1);
  RandomStream cs2(83);
  const CalibrationReport rep2 = calibrate_constants(*task2, w1, EtaSchedule::power_law(0.75),
                                                     30, cs2, /*estimate_smoothness=*/false);
  CHECK(task2->constants().L == doctest::Approx(L_true));
  CHECK(rep2.smoothness == doctest::Approx(L_true));

  RandomStream cs3(83);
  CHECK_THROWS_AS(
      calibrate_constants(*task2, w1, EtaSchedule::power_law(0.75), 0, cs3, false),
      InvalidArgument);
}
