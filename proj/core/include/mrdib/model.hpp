#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrdib/data.hpp"
#include "mrdib/infotheory.hpp"
#include "mrdib/tensor.hpp"

namespace mrdib::model {

using info::DiagonalGaussian;
using info::LatentSample;
using num::Rng;
using num::Tensor;

enum class Modality { visual, textual };

struct Dims {
  std::size_t latent = 64;
  std::size_t encoder_hidden = 256;
  std::size_t decoder_hidden = 128;
  std::size_t mine_hidden = 128;
};

/// host_only: ID embeddings plus a linear projection of the raw features.
/// mib_only: variational encoders and the joint decoder.
/// full: everything, including unimodal decoders and the statistics network.
enum class Variant { host_only, mib_only, full };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  Dims dims;
  Variant variant = Variant::full;
  /// When false, item ID embeddings are left out of every score.
  bool item_id_embedding = true;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// d_m -> hidden -> 2d relu perceptron; output split into mean and a
/// log-variance clamped to [-10, 10].
class ModalityEncoder {
 public:
  static constexpr double kLogVarianceLimit = 10.0;

  ModalityEncoder() = default;
  ModalityEncoder(Modality modality, std::size_t input_dim, std::size_t hidden, std::size_t latent,
                  Rng& rng);

  DiagonalGaussian encode(const Tensor& x) const;

  Modality modality() const { return modality_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t latent_dim() const { return latent_; }
  std::vector<NamedTensor> named_parameters(const std::string& prefix) const;

 private:
  Modality modality_ = Modality::visual;
  std::size_t input_dim_ = 0, latent_ = 0;
  Tensor w1_, b1_, w2_, b2_;
};

/// Maps latent(s) to an item-side vector of the embedding dimension.
class Decoder {
 public:
  enum class Arity { joint, unimodal1, unimodal2 };

  Decoder() = default;
  Decoder(Arity arity, std::size_t latent, std::size_t hidden, std::size_t out, Rng& rng);

  Tensor decode(const Tensor& z) const;

  Arity arity() const { return arity_; }
  std::size_t input_dim() const { return input_dim_; }
  std::vector<NamedTensor> named_parameters(const std::string& prefix) const;

 private:
  Arity arity_ = Arity::joint;
  std::size_t input_dim_ = 0;
  Tensor w1_, b1_, w2_, b2_;
};

/// Concatenation [z1; z2], visual first.
Tensor fuse(const Tensor& z1, const Tensor& z2);

enum class ScoreMode { base, joint, unimodal1, unimodal2 };

const char* to_string(ScoreMode m);

/// Both modality posteriors and their draws for a set of items.
struct LatentPair {
  LatentSample visual;
  LatentSample textual;
};

/// Latent-factor recommender with the optional representation stack.
class HostModel {
 public:
  HostModel(ModelConfig config, std::size_t n_users, std::size_t n_items,
            const data::FeatureMatrix& visual, const data::FeatureMatrix& textual,
            std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }
  std::size_t latent_dim() const { return config_.dims.latent; }

  const Tensor& user_embedding() const { return user_emb_; }
  const Tensor& item_embedding() const { return item_emb_; }
  const Tensor& visual_features() const { return visual_; }
  const Tensor& textual_features() const { return textual_; }

  bool has_encoders() const { return encoder_visual_.has_value(); }
  bool has_unimodal_decoders() const { return decoder_visual_.has_value(); }
  bool has_mine() const { return mine_.has_value(); }

  const ModalityEncoder& encoder(Modality m) const;
  const Decoder& decoder(Decoder::Arity a) const;
  info::MineNetwork& mine();
  const info::MineNetwork& mine() const;

  /// Encodes the rows `items` of both feature matrices and draws latents.
  LatentPair encode_items(std::span<const std::size_t> items, Rng& rng,
                          info::SampleMode mode) const;
  /// Item-side contribution (without the ID embedding) for the encoded rows.
  Tensor decode(const LatentPair& latents, ScoreMode mode) const;
  /// base-mode contribution W_proj [x_v; x_t] for the given item rows.
  Tensor project_features(std::span<const std::size_t> items) const;

  /// Trainable parameters except the statistics network, in a fixed order.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  /// Every tensor a checkpoint stores, statistics network included.
  std::vector<NamedTensor> checkpoint_tensors() const;
  std::size_t parameter_count() const;
  std::vector<std::string> components() const;

 private:
  ModelConfig config_;
  std::size_t n_users_, n_items_;
  Tensor visual_, textual_;
  Tensor user_emb_, item_emb_;
  std::optional<Tensor> projection_;
  std::optional<ModalityEncoder> encoder_visual_, encoder_textual_;
  std::optional<Decoder> decoder_joint_, decoder_visual_, decoder_textual_;
  std::optional<info::MineNetwork> mine_;
};

/// Scores for (user, item) pairs, one row each: e_u . (e_i + item_side[local]).
/// `item_side` rows are indexed by `local`; `items` index the ID embedding.
Tensor score_pairs(const HostModel& host, std::span<const std::size_t> users,
                   std::span<const std::size_t> items, const Tensor& item_side,
                   std::span<const std::size_t> local);

/// Single deterministic score using posterior means.
double score(const HostModel& host, std::size_t user, std::size_t item, ScoreMode mode);

/// Catalog-wide scores with precomputed item representations. Masked
/// entries rank as -infinity.
class ScoreMatrixView {
 public:
  ScoreMatrixView(const HostModel& host, ScoreMode mode);
  ScoreMatrixView(const HostModel& host, ScoreMode mode, bool include_item_embedding);

  std::size_t n_items() const { return n_items_; }
  std::vector<double> row(std::size_t user) const;
  void row_into(std::size_t user, std::span<double> out) const;
  /// Row with the listed items set to -infinity.
  std::vector<double> masked_row(std::size_t user, std::span<const std::size_t> mask) const;

 private:
  std::size_t n_items_, dim_;
  std::vector<double> items_;  // n_items x dim
  std::vector<double> users_;  // n_users x dim
};

std::vector<double> score_all(const HostModel& host, std::size_t user, ScoreMode mode);

}  // namespace mrdib::model
