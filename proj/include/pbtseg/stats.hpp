#pragma once

#include <cstddef>
#include <optional>
#include <span>

namespace pbtseg {

/// Descriptive statistics in the median (SD) reporting style. The SD is the
/// sample SD (n - 1 denominator) and is absent for n < 2; everything but `n`
/// is absent for an empty sample.
struct Summary {
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> median;
  std::optional<double> sd;
  std::optional<double> min;
  std::optional<double> max;
};

/// Even n takes the mean of the two central values.
std::optional<double> median(std::span<const double> values);
std::optional<double> sample_sd(std::span<const double> values);
Summary summarize(std::span<const double> values);

}  // namespace pbtseg
