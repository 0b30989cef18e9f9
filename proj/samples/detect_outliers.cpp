// Fits the three detectors on a Gaussian cloud and scores a few probes.

#include <cstdio>
#include <vector>

#include "ubs/detectors.hpp"

int main() {
  using namespace ubs::detectors;
  ubs::Rng rng(7);
  std::vector<Point> train;
  for (int i = 0; i < 200; ++i) train.push_back({ubs::normal(rng), ubs::normal(rng)});

  const std::vector<Point> probes{{0.0, 0.0}, {1.5, -1.0}, {6.0, 6.0}};
  DetectorParams params;
  params.seed = 7;
  for (Method m : kAllMethods) {
    const Detector det(m, train, params);
    std::printf("%-8s", std::string(to_string(m)).c_str());
    for (const auto& p : probes) std::printf("  %9.4f", det.score(p));
    std::printf("   (threshold %.2f)\n", params.threshold(m));
  }
}
