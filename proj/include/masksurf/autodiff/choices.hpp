#pragma once

#include <cstddef>
#include <vector>

namespace masksurf::ad {

/// Passes through the discrete choices (argmax winners, signs, nearest
/// neighbours) a forward pass makes. Inside a ChoiceRecording they are stored
/// in call order; inside a ChoiceReplay the stored ones are returned instead,
/// so a perturbed pass evaluates the same smooth piece that backward
/// differentiates.
std::vector<std::size_t> hold_choice(std::vector<std::size_t> computed);

class ChoiceRecording {
 public:
  ChoiceRecording();
  ~ChoiceRecording();
  ChoiceRecording(const ChoiceRecording&) = delete;
  ChoiceRecording& operator=(const ChoiceRecording&) = delete;

  std::vector<std::vector<std::size_t>> take();

 private:
  std::vector<std::vector<std::size_t>> tape_;
};

class ChoiceReplay {
 public:
  /// Throws InvalidArgument from hold_choice when the pass asks for more
  /// choices than recorded or for one of a different size.
  explicit ChoiceReplay(const std::vector<std::vector<std::size_t>>& tape);
  ~ChoiceReplay();
  ChoiceReplay(const ChoiceReplay&) = delete;
  ChoiceReplay& operator=(const ChoiceReplay&) = delete;
};

}  // namespace masksurf::ad
