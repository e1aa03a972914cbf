#pragma once

// Small configurations that keep finite-difference checks and end-to-end
// runs fast.

#include "eventbind/harness/config.hpp"

#include <string>

namespace eventbind::testing {

/// 8x8 inputs, two 4x4 patches per side, width 8, D' = 8.
inline EncoderGeometry tiny_geometry() {
  EncoderGeometry g;
  g.image_size = 8;
  g.patch = 4;
  g.width = 8;
  g.layers = 2;
  g.heads = 2;
  g.frames = 2;
  g.prompts = 2;
  g.embed_dim = 8;
  return g;
}

inline TextGeometry tiny_text() {
  TextGeometry g;
  g.width = 8;
  g.layers = 1;
  g.heads = 2;
  g.context = 16;
  g.learnable_prompts = 2;
  g.embed_dim = 8;
  return g;
}

/// Whole-model config on the tiny geometry; 32x32 sensor, 2 frames of 8x8.
inline harness::RunConfig tiny_run_config(const std::string& out_dir = "") {
  harness::RunConfig c;
  c.event = tiny_geometry();
  c.image_layers = 1;
  c.text = tiny_text();
  c.representation = RepresentationConfig{512, 256, 8};
  c.train_per_category = 4;
  c.val_per_category = 2;
  c.batch_size = 5;
  c.epochs = 1;
  c.eval_every = 1;
  c.out_dir = out_dir;
  return c;
}

}  // namespace eventbind::testing
