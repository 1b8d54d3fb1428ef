#pragma once

// A small trained bundle on a three-joint toy dataset, built once per test
// binary.

#include <memory>

#include "marionette/bundle.hpp"

namespace marionette::testing {

inline dataset::Dataset small_toy_dataset(std::uint64_t seed = 4) {
  dataset::ToyConfig toy;
  toy.items_per_tag = 8;
  toy.min_duration = 8;
  toy.max_duration = 12;
  toy.skeleton = "chain3";
  toy.seed = seed;
  return dataset::generate_toy_dataset(toy);
}

inline bundle::BundleConfig small_bundle_config() {
  bundle::BundleConfig c;
  c.model = model::ModelConfig::tiny(3, 2);
  c.model.seed = 3;
  c.training.epochs = 30;
  c.training.activate_epoch = 10;
  c.training.accomplish_epoch = 20;
  c.training.batch_size = 8;
  c.training.learning_rate = 1e-3;
  c.training.seed = 5;
  c.classifier.d_model = 16;
  c.classifier.n_heads = 2;
  c.classifier.n_layers = 1;
  c.classifier.ff_dim = 32;
  c.classifier_training.epochs = 30;
  c.classifier_training.seed = 6;
  return c;
}

inline std::shared_ptr<bundle::ModelBundle> shared_small_bundle() {
  static const auto shared =
      std::make_shared<bundle::ModelBundle>(bundle::train_bundle(small_toy_dataset(), small_bundle_config()));
  return shared;
}

}  // namespace marionette::testing
