#include "crayon/training/config.hpp"

#include <cmath>

#include "crayon/errors.hpp"

namespace crayon::training {

void TrainConfig::validate() const {
  if (n_bases < 1) throw CountError("n_bases must be >= 1");
  if (rank < 1) throw CountError("rank must be >= 1");
  if (batch_size < 1) throw CountError("batch_size must be >= 1");
  if (pca_dim < 1) throw CountError("pca_dim must be >= 1");
  if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr)) {
    throw RangeError("learning rate must be finite and non-negative");
  }
  if (!(scaling > 0.0)) throw RangeError("scaling must be positive");
}

TrainConfig TrainConfig::large_scale() {
  TrainConfig c;
  c.n_bases = 32;
  c.rank = 4;
  c.scaling = 4.0;
  c.optimizer.lr = 1e-4;
  c.batch_size = 128;
  c.max_iters = 800;
  return c;
}

nlohmann::json to_json(const AdamWConfig& c) {
  return {{"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"weight_decay", c.weight_decay}};
}

AdamWConfig adamw_from_json(const nlohmann::json& j) {
  AdamWConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"n_bases", c.n_bases},
          {"rank", c.rank},
          {"scaling", c.scaling},
          {"pca_dim", c.pca_dim},
          {"use_pca", c.use_pca},
          {"normalize_alpha", c.normalize_alpha},
          {"constant_alpha", c.constant_alpha},
          {"optimizer", to_json(c.optimizer)},
          {"batch_size", c.batch_size},
          {"max_iters", c.max_iters},
          {"seed", c.seed},
          {"embedding_sample_cap", c.embedding_sample_cap}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.n_bases = j.value("n_bases", c.n_bases);
    c.rank = j.value("rank", c.rank);
    c.scaling = j.value("scaling", c.scaling);
    c.pca_dim = j.value("pca_dim", c.pca_dim);
    c.use_pca = j.value("use_pca", c.use_pca);
    c.normalize_alpha = j.value("normalize_alpha", c.normalize_alpha);
    c.constant_alpha = j.value("constant_alpha", c.constant_alpha);
    if (j.contains("optimizer")) c.optimizer = adamw_from_json(j.at("optimizer"));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.seed = j.value("seed", c.seed);
    c.embedding_sample_cap = j.value("embedding_sample_cap", c.embedding_sample_cap);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const PretrainConfig& c) {
  return {{"optimizer", to_json(c.optimizer)},
          {"batch_size", c.batch_size},
          {"max_iters", c.max_iters},
          {"seed", c.seed}};
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& j) {
  PretrainConfig c;
  try {
    if (j.contains("optimizer")) c.optimizer = adamw_from_json(j.at("optimizer"));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pretrain config: ") + e.what());
  }
  return c;
}

}  // namespace crayon::training
