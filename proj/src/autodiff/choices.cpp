#include "masksurf/autodiff/choices.hpp"

#include <string>

#include "masksurf/common.hpp"

namespace masksurf::ad {

namespace {

enum class Mode { off, record, replay };

struct ChoiceState {
  Mode mode = Mode::off;
  std::vector<std::vector<std::size_t>>* recording = nullptr;
  const std::vector<std::vector<std::size_t>>* replay = nullptr;
  std::size_t cursor = 0;
};

thread_local ChoiceState state;

}  // namespace

std::vector<std::size_t> hold_choice(std::vector<std::size_t> computed) {
  switch (state.mode) {
    case Mode::off:
      return computed;
    case Mode::record:
      state.recording->push_back(computed);
      return computed;
    case Mode::replay:
      break;
  }
  if (state.cursor >= state.replay->size()) {
    throw InvalidArgument("choice replay: pass made more choices than were recorded");
  }
  const auto& held = (*state.replay)[state.cursor++];
  if (held.size() != computed.size()) {
    throw InvalidArgument("choice replay: choice " + std::to_string(state.cursor - 1) +
                          " has size " + std::to_string(computed.size()) + ", recorded " +
                          std::to_string(held.size()));
  }
  return held;
}

ChoiceRecording::ChoiceRecording() {
  if (state.mode != Mode::off) throw InvalidArgument("choice recording: already active");
  state.mode = Mode::record;
  state.recording = &tape_;
}

ChoiceRecording::~ChoiceRecording() {
  state.mode = Mode::off;
  state.recording = nullptr;
}

std::vector<std::vector<std::size_t>> ChoiceRecording::take() { return std::move(tape_); }

ChoiceReplay::ChoiceReplay(const std::vector<std::vector<std::size_t>>& tape) {
  if (state.mode != Mode::off) throw InvalidArgument("choice replay: already active");
  state.mode = Mode::replay;
  state.replay = &tape;
  state.cursor = 0;
}

ChoiceReplay::~ChoiceReplay() {
  state.mode = Mode::off;
  state.replay = nullptr;
  state.cursor = 0;
}

}  // namespace masksurf::ad
