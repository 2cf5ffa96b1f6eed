#pragma once

// Random instances for property tests.

#include <random>
#include <string>
#include <vector>

#include "evseq/event.hpp"

namespace gen {

inline const evseq::TaskKind kAllTasks[] = {evseq::TaskKind::general, evseq::TaskKind::dvc, evseq::TaskKind::mr,
                                            evseq::TaskKind::vhd, evseq::TaskKind::vs};

inline std::string caption(std::mt19937_64& rng, std::size_t max_len = 24) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz .,'-ABCXYZ0123456789";
  std::string s(1 + rng() % max_len, 'a');
  for (auto& c : s) c = alphabet[rng() % alphabet.size()];
  return s;
}

// Times on a 1 ms grid within [0, duration].
inline double time_in(std::mt19937_64& rng, double duration) {
  const auto max_milli = static_cast<long long>(duration * 1000.0);
  return static_cast<double>(static_cast<long long>(rng() % static_cast<unsigned long long>(max_milli + 1))) / 1000.0;
}

// A valid response for `task` with 1..max_events events, already rounded
// to what the codec represents.
inline evseq::Response response(std::mt19937_64& rng, evseq::TaskKind task, double duration,
                                std::size_t max_events = 5) {
  evseq::Response r;
  const std::size_t k = 1 + rng() % max_events;
  const evseq::PresentMask mask = evseq::mask_for(task);
  for (std::size_t i = 0; i < k; ++i) {
    evseq::Event e;
    e.present = mask;
    if (mask.time) {
      double a = evseq::round1(time_in(rng, duration));
      double b = evseq::round1(time_in(rng, duration));
      if (a > b) std::swap(a, b);
      e.start = std::min(a, duration);
      e.end = std::min(b, duration);
    }
    if (mask.score) e.score = static_cast<double>(rng() % 100) / 10.0;
    if (mask.text) e.caption = caption(rng);
    r.events.push_back(e);
  }
  r.events = evseq::sort_events(r.events);
  return r;
}

// A sample with `frames` frames, unit-spaced times and empty features.
inline evseq::VideoSample sample(std::mt19937_64& rng, evseq::TaskKind task, std::size_t frames) {
  evseq::VideoSample s;
  s.video_id = "v" + std::to_string(rng() % 100000);
  s.duration = static_cast<double>(frames == 0 ? 10 : frames);
  for (std::size_t f = 0; f < frames; ++f) s.frame_times.push_back(static_cast<double>(f));
  s.instruction = "describe " + std::to_string(rng() % 10);
  s.task = task;
  return s;
}

}  // namespace gen
