#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "paid/error.hpp"
#include "paid/tensor.hpp"

using namespace paid;

TEST(Tensor, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<Real>(5)), ShapeError);
  const Tensor t({2, 3}, std::vector<Real>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.extent(1), 3u);
  EXPECT_EQ(t.row_size(), 3u);
}

TEST(Tensor, FillConstructorAndScalar) {
  const Tensor t({4}, Real(2.5));
  for (Real v : t.values()) EXPECT_EQ(v, 2.5);
  EXPECT_EQ(Tensor::scalar(3).item(), 3);
  EXPECT_THROW((void)t.item(), ContractError);
}

TEST(Tensor, ReshapeKeepsValues) {
  const Tensor t({2, 3}, std::vector<Real>{1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.storage(), t.storage());
  EXPECT_THROW((void)t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, SliceAndGatherRows) {
  const Tensor t({3, 2}, std::vector<Real>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.slice_rows(1, 3), Tensor({2, 2}, std::vector<Real>{3, 4, 5, 6}));
  const std::size_t rows[] = {2, 0};
  EXPECT_EQ(t.gather_rows(rows), Tensor({2, 2}, std::vector<Real>{5, 6, 1, 2}));
}

TEST(Tensor, ArgmaxTiesGoToLowestIndex) {
  const Tensor m({2, 3}, std::vector<Real>{1, 3, 3, 0, -1, 0});
  EXPECT_EQ(argmax_rows(m), (std::vector<int>{1, 0}));
}

TEST(Tensor, FiniteAndFingerprint) {
  Tensor t({3}, std::vector<Real>{0, 1, 2});
  EXPECT_TRUE(all_finite(t));
  const auto before = fingerprint(t);
  EXPECT_EQ(before, fingerprint(Tensor({3}, std::vector<Real>{0, 1, 2})));
  EXPECT_NE(before, fingerprint(t.reshaped({1, 3})));
  t[1] = std::numeric_limits<Real>::quiet_NaN();
  EXPECT_FALSE(all_finite(t));
  EXPECT_NE(before, fingerprint(t));
}

TEST(Tensor, MaxAbsDiff) {
  const Tensor a({2}, std::vector<Real>{1, -2});
  const Tensor b({2}, std::vector<Real>{1.5, 1});
  EXPECT_EQ(max_abs_diff(a, b), 3);
  EXPECT_THROW((void)max_abs_diff(a, Tensor({3})), ShapeError);
}

TEST(Tensor, ShapeToString) {
  EXPECT_EQ(to_string(Shape{2, 3}), "[2, 3]");
  EXPECT_EQ(element_count(Shape{2, 3, 4}), 24u);
}
