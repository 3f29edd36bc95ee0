#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "physrec/rng.hpp"
#include "physrec/signal.hpp"
#include "test_support.hpp"

using namespace physrec;
using physrec::testing::vec;

namespace {

Trace ramp_trace(int k, double dt) {
  Trace tr;
  tr.dt = dt;
  tr.y.resize(1, k);
  tr.u.resize(1, k);
  for (int j = 0; j < k; ++j) {
    tr.y(0, j) = j;
    tr.u(0, j) = -j;
  }
  tr.y_labels = {"y"};
  tr.u_labels = {"u"};
  return tr;
}

Vector tone(double hz, double fs, int k, double amp = 1.0) {
  Vector x(k);
  for (int j = 0; j < k; ++j) x[j] = amp * std::sin(2.0 * std::numbers::pi * hz * j / fs);
  return x;
}

}  // namespace

TEST(EncodeEvents, Examples) {
  EXPECT_EQ(encode_events({{0, 0.2, 5.0}}, 1, 0.0, 0.1, 5), Matrix({{0.0, 0.0, 5.0, 0.0, 0.0}}));
  EXPECT_EQ(encode_events({}, 2, 0.0, 0.1, 5), Matrix::Zero(2, 5));
  const Matrix two = encode_events({{0, 0.29, 3.0}, {0, 0.31, 4.0}}, 1, 0.0, 0.1, 5);
  EXPECT_EQ(two(0, 3), 7.0);
  EXPECT_EQ(two.sum(), 7.0);
}

TEST(EncodeEvents, OutOfRangeNamesEvent) {
  try {
    encode_events({{0, 0.1, 1.0}, {0, 0.9, 2.0}}, 1, 0.0, 0.1, 5);
    FAIL();
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("event 1"), std::string::npos);
  }
  EXPECT_THROW(encode_events({{2, 0.1, 1.0}}, 1, 0.0, 0.1, 5), ContractViolation);
}

TEST(FractionalShift, Examples) {
  const Vector x = vec({0.0, 5.0, 0.0, 1.0});
  EXPECT_EQ(fractional_shift(x, 0.0), x);
  EXPECT_EQ(fractional_shift(x, 1.0), vec({0.0, 0.0, 5.0, 0.0}));
  EXPECT_EQ(fractional_shift(vec({4.0, 0.0, 0.0}), 0.5), vec({2.0, 2.0, 0.0}));
  EXPECT_THROW(fractional_shift(x, -0.1), ContractViolation);
  EXPECT_THROW(fractional_shift(x, 4.0), ContractViolation);
}

TEST(FractionalShift, SignedAdvances) {
  EXPECT_EQ(signed_fractional_shift(vec({0.0, 0.0, 6.0}), -1.5), vec({3.0, 3.0, 0.0}));
}

TEST(Decimate, Examples) {
  const Trace tr = ramp_trace(5, 0.001);
  const Trace same = decimate(tr, 1);
  EXPECT_EQ(same.y, tr.y);
  EXPECT_EQ(same.dt, tr.dt);
  const Trace half = decimate(tr, 2);
  EXPECT_EQ(half.k(), 3);
  EXPECT_EQ(half.y, Matrix({{0.0, 2.0, 4.0}}));
  EXPECT_EQ(half.u, Matrix({{0.0, -2.0, -4.0}}));
  EXPECT_DOUBLE_EQ(decimate(ramp_trace(20, 0.001), 10).dt, 0.01);
  EXPECT_THROW(decimate(tr, 5), ContractViolation);
  EXPECT_THROW(decimate(tr, 0), ContractViolation);
}

TEST(Periodogram, PureToneConcentrates) {
  const Periodogram p = periodogram(tone(5.0, 100.0, 1000), 100.0);
  Eigen::Index peak;
  p.power.maxCoeff(&peak);
  EXPECT_NEAR(p.freqs[peak], 5.0, 0.1);
  EXPECT_GT(p.power[peak] / p.power.tail(p.power.size() - 1).sum(), 0.99);
  EXPECT_DOUBLE_EQ(p.freqs[p.freqs.size() - 1], 50.0);
}

TEST(Periodogram, ConstantIsAllDc) {
  const Periodogram p = periodogram(Vector::Constant(64, 3.0), 10.0);
  EXPECT_NEAR(p.power[0], 9.0, 1e-12);
  EXPECT_LT(p.power.tail(p.power.size() - 1).cwiseAbs().maxCoeff(), 1e-20);
}

TEST(Periodogram, TwoTonesGiveTwoBins) {
  const Vector x = tone(3.0, 100.0, 1000) + tone(20.0, 100.0, 1000, 0.5);
  const Periodogram p = periodogram(x, 100.0);
  std::vector<std::pair<double, double>> bins;
  for (Eigen::Index j = 0; j < p.power.size(); ++j) bins.emplace_back(p.power[j], p.freqs[j]);
  std::sort(bins.rbegin(), bins.rend());
  EXPECT_NEAR(bins[0].second, 3.0, 1e-9);
  EXPECT_NEAR(bins[1].second, 20.0, 1e-9);
  EXPECT_GT(bins[0].first + bins[1].first, 0.99 * p.power.sum());
}

TEST(NyquistRate, Examples) {
  const double bin = 100.0 / 1000.0;
  EXPECT_NEAR(nyquist_rate(tone(5.0, 100.0, 1000), 100.0), 10.0, 2.0 * bin);
  EXPECT_EQ(nyquist_rate(Vector::Constant(100, 2.0), 100.0), 0.0);
  const Vector two = tone(2.0, 100.0, 1000, 3.0) + tone(40.0, 100.0, 1000, 1.0);
  EXPECT_NEAR(nyquist_rate(two, 100.0), 4.0, 2.0 * bin);
}

TEST(MakeBatches, SplitAndBatchShape) {
  std::vector<Trace> traces(4, ramp_trace(3200, 0.1));
  const BatchSet set = make_batches(traces, 32, 200, 0.75, 7);
  EXPECT_EQ(set.instances.size(), 64u);
  EXPECT_EQ(set.train.size(), 48u);
  EXPECT_EQ(set.test.size(), 16u);
  ASSERT_EQ(set.batches.size(), 2u);
  EXPECT_EQ(set.batches[0].dimension(0), 32);
  EXPECT_EQ(set.batches[0].dimension(1), 2);
  EXPECT_EQ(set.batches[0].dimension(2), 200);
  EXPECT_EQ(set.batches[1].dimension(0), 16);
  const BatchSet again = make_batches(traces, 32, 200, 0.75, 7);
  EXPECT_EQ(again.train, set.train);
}

TEST(MakeBatches, ShortTraceRejected) {
  try {
    make_batches({ramp_trace(300, 0.1), ramp_trace(150, 0.1)}, 8, 200, 0.8, 1);
    FAIL();
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("trace 1"), std::string::npos);
  }
}

TEST(TraceCsv, RoundTrip) {
  Trace tr = ramp_trace(6, 0.25);
  tr.t0 = 1.0;
  tr.y(0, 3) = 0.1;
  const auto path = std::filesystem::temp_directory_path() / "physrec_trace_roundtrip.csv";
  write_trace_csv(path.string(), tr);
  const Trace back = read_trace_csv(path.string(), 1);
  std::filesystem::remove(path);
  EXPECT_EQ(back.y, tr.y);
  EXPECT_EQ(back.u, tr.u);
  EXPECT_DOUBLE_EQ(back.dt, 0.25);
  EXPECT_DOUBLE_EQ(back.t0, 1.0);
  EXPECT_EQ(back.y_labels, tr.y_labels);
}

TEST(SignalProperties, ParsevalMeanSquare) {
  Rng rng(3);
  for (int k : {64, 101, 500}) {
    Vector x(k);
    for (auto& v : x) v = rng.normal() + 0.3;
    EXPECT_NEAR(periodogram(x, 10.0).power.sum(), x.squaredNorm() / k, 1e-9 * x.squaredNorm() / k);
  }
}

TEST(SignalProperties, ShiftMassAndContinuity) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Vector x = Vector::Zero(40);
    for (int j = 0; j < 20; ++j)
      if (rng.uniform() < 0.3) x[j] = rng.uniform(-5.0, 5.0);
    const double s = rng.uniform(0.0, 15.0);
    const double eps = rng.uniform(1e-3, 0.999);
    EXPECT_NEAR(fractional_shift(x, s).sum(), x.sum(), 1e-12);
    const double gap = (fractional_shift(x, s) - fractional_shift(x, s + eps)).lpNorm<1>();
    EXPECT_LE(gap, 2.0 * x.lpNorm<1>() * eps + 1e-12);
  }
}

TEST(SignalProperties, DecimateComposes) {
  const Trace tr = ramp_trace(97, 0.01);
  for (int f1 : {1, 2, 3})
    for (int f2 : {1, 2, 4}) {
      const Trace a = decimate(decimate(tr, f1), f2);
      const Trace b = decimate(tr, f1 * f2);
      EXPECT_EQ(a.y, b.y);
      EXPECT_DOUBLE_EQ(a.dt, b.dt);
    }
}

TEST(SignalProperties, IntegerShiftMatchesDelayedEvents) {
  const EventList ev = {{0, 0.3, 2.0}, {0, 1.1, -1.0}, {1, 0.5, 4.0}, {1, 1.7, 3.0}};
  const double dt = 0.1;
  const int k = 20;
  const Matrix enc = encode_events(ev, 2, 0.0, dt, k);
  for (int s : {0, 1, 3, 6}) {
    EventList moved;
    for (Event e : ev) {
      e.t += s * dt;
      if (e.t <= (k - 1) * dt + 1e-12) moved.push_back(e);
    }
    const Matrix expect = encode_events(moved, 2, 0.0, dt, k);
    for (int c = 0; c < 2; ++c) EXPECT_EQ(fractional_shift(enc.row(c).transpose(), s), Vector(expect.row(c).transpose()));
  }
}
