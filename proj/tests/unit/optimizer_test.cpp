#include <gtest/gtest.h>

#include <cmath>

#include "fundus/error.hpp"
#include "fundus/optimizer.hpp"

using namespace fundus;
using namespace fundus::train;

namespace {

nn::ParamStore scalar_store(double theta) {
  nn::ParamStore p;
  p.add("w", Tensor({1}, {theta}), true);
  return p;
}

}  // namespace

TEST(Adam, FirstStepHandComputation) {
  auto params = scalar_store(1.0);
  AdamState state;
  state.config.lr = 0.1;
  adam_step(params, {{"w", Tensor({1}, {1.0})}}, state);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(params.at("w")[0], 0.9, 1e-8);
  EXPECT_EQ(state.step, 1u);
  EXPECT_NEAR(state.first_moment.at("w")[0], 0.1, 1e-15);
  EXPECT_NEAR(state.second_moment.at("w")[0], 0.001, 1e-15);
}

TEST(Adam, TwoStepsAgainstRecurrence) {
  auto params = scalar_store(0.5);
  AdamState state;
  state.config.lr = 0.01;
  const double g[2] = {0.3, -0.7};
  double theta = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    adam_step(params, {{"w", Tensor({1}, {g[t - 1]})}}, state);
    m = 0.9 * m + 0.1 * g[t - 1];
    v = 0.999 * v + 0.001 * g[t - 1] * g[t - 1];
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(params.at("w")[0], theta, 1e-14);
}

TEST(Adam, ZeroGradientFromZeroStateLeavesParameters) {
  auto params = scalar_store(3.0);
  AdamState state;
  adam_step(params, {{"w", Tensor({1}, {0.0})}}, state);
  adam_step(params, {}, state);
  EXPECT_EQ(params.at("w")[0], 3.0);
}

TEST(Adam, OnlyTrainableParametersMove) {
  nn::ParamStore params;
  params.add("w", Tensor({2}, {1.0, 2.0}), true);
  params.add("running_mean", Tensor({2}, {5.0, 6.0}), false);
  AdamState state;
  adam_step(params, {{"w", Tensor({2}, {1.0, -1.0})}}, state);
  EXPECT_EQ(params.at("running_mean"), Tensor({2}, {5.0, 6.0}));
  EXPECT_LT(params.at("w")[0], 1.0);
  EXPECT_GT(params.at("w")[1], 2.0);
  EXPECT_FALSE(state.first_moment.contains("running_mean"));
}

TEST(Adam, IsDeterministic) {
  auto run = [] {
    auto params = scalar_store(1.0);
    AdamState state;
    for (int i = 0; i < 50; ++i) adam_step(params, {{"w", Tensor({1}, {std::sin(i * 0.3)})}}, state);
    return params.at("w")[0];
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsBadInputs) {
  auto params = scalar_store(1.0);
  AdamState state;
  state.config.lr = 0.0;
  EXPECT_THROW(adam_step(params, {}, state), std::invalid_argument);
  state.config.lr = 1e-3;
  EXPECT_THROW(adam_step(params, {{"x", Tensor({1})}}, state), std::invalid_argument);
  EXPECT_THROW(adam_step(params, {{"w", Tensor({2})}}, state), ShapeError);
  EXPECT_EQ(state.step, 0u);
  EXPECT_EQ(params.at("w")[0], 1.0);
}
