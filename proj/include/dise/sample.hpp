#pragma once

#include <string>
#include <vector>

namespace dise {

/// One labelled feature vector. Label 0 is a bona fide (genuine)
/// presentation, label 1 an attack.
struct Sample {
  std::string id;
  int label = 0;
  double quality = 1.0;  // 1 = clean
  std::vector<double> features;
  bool corrupted = false;

  bool operator==(const Sample&) const = default;
};

}  // namespace dise
