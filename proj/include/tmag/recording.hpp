#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tmag/envelope.hpp"
#include "tmag/error.hpp"

namespace tmag {

enum class Phase { FlexionOnset, ReturnOnset, Rest };

inline std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::FlexionOnset: return "flexion-onset";
    case Phase::ReturnOnset: return "return-onset";
    case Phase::Rest: return "rest";
  }
  return "rest";
}

inline std::optional<Phase> parse_phase(std::string_view s) {
  if (s == "flexion-onset") return Phase::FlexionOnset;
  if (s == "return-onset") return Phase::ReturnOnset;
  if (s == "rest") return Phase::Rest;
  return std::nullopt;
}

struct Annotation {
  std::int64_t n = 0;
  int gesture = 0;
  Phase phase = Phase::FlexionOnset;

  bool operator==(const Annotation&) const = default;
};

/// A multi-channel sEMG session with optional ground-truth annotations.
struct Recording {
  double fs = 200.0;
  std::size_t channels = 8;
  std::vector<RawSample> samples;
  std::vector<Annotation> annotations;

  std::size_t size() const noexcept { return samples.size(); }

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].channels.size() != channels)
        throw StructuralError("sample " + std::to_string(i) + " has " + std::to_string(samples[i].channels.size()) +
                              " channels, expected " + std::to_string(channels));
      if (i > 0 && samples[i].t != samples[i - 1].t + 1)
        throw StructuralError("sample index " + std::to_string(samples[i].t) + " does not follow " +
                              std::to_string(samples[i - 1].t));
    }
    const std::int64_t first = samples.empty() ? 0 : samples.front().t;
    const std::int64_t end = first + static_cast<std::int64_t>(samples.size());
    for (const auto& a : annotations)
      if (a.n < first || a.n >= end)
        throw StructuralError("annotation at " + std::to_string(a.n) + " lies outside the recording");
  }

  std::vector<Annotation> annotations_of(Phase phase) const {
    std::vector<Annotation> out;
    for (const auto& a : annotations)
      if (a.phase == phase) out.push_back(a);
    return out;
  }

  bool operator==(const Recording&) const = default;
};

}  // namespace tmag
