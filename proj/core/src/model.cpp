#include "mrdib/model.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "mrdib/errors.hpp"
#include "mrdib/optim.hpp"

namespace mrdib::model {

using namespace mrdib::num;

namespace {

// a diverged encoder is a numerical failure, not a caller error
void check_posterior(const DiagonalGaussian& q, const char* modality) {
  auto finite = [](const Tensor& t) {
    for (double v : t.values())
      if (!std::isfinite(v)) return false;
    return true;
  };
  if (!finite(q.mean) || !finite(q.log_variance))
    throw NumericalError(std::string("non-finite ") + modality + " posterior from the encoder");
}

// independent init streams per component, so adding or removing one
// component never shifts another's initial weights
enum InitStream : std::uint64_t {
  kUsers = 11,
  kItems = 12,
  kProjection = 13,
  kEncoderVisual = 21,
  kEncoderTextual = 22,
  kDecoderJoint = 31,
  kDecoderVisual = 32,
  kDecoderTextual = 33,
  kMine = 41,
};

Tensor zero_bias(std::size_t n) { return Tensor::parameter(1, n, std::vector<double>(n, 0.0)); }

Tensor features_tensor(const data::FeatureMatrix& fm, std::size_t n_items, const char* what) {
  require(fm.rows == n_items, std::string(what) + " features have " + std::to_string(fm.rows) +
                                  " rows for " + std::to_string(n_items) + " items");
  require(fm.cols > 0, std::string(what) + " features have no columns");
  return Tensor(fm.rows, fm.cols, fm.values);
}

}  // namespace

const char* to_string(Variant v) {
  switch (v) {
    case Variant::host_only: return "host-only";
    case Variant::mib_only: return "mib-only";
    case Variant::full: return "full";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "host-only") return Variant::host_only;
  if (s == "mib-only") return Variant::mib_only;
  if (s == "full") return Variant::full;
  throw ContractViolation("unknown mode '" + s + "' (expected full|mib-only|host-only)");
}

const char* to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::base: return "base";
    case ScoreMode::joint: return "joint";
    case ScoreMode::unimodal1: return "unimodal-1";
    case ScoreMode::unimodal2: return "unimodal-2";
  }
  return "?";
}

// ---- ModalityEncoder -------------------------------------------------------------

ModalityEncoder::ModalityEncoder(Modality modality, std::size_t input_dim, std::size_t hidden,
                                 std::size_t latent, Rng& rng)
    : modality_(modality), input_dim_(input_dim), latent_(latent) {
  w1_ = xavier_uniform(rng, input_dim, hidden);
  b1_ = zero_bias(hidden);
  w2_ = xavier_uniform(rng, hidden, 2 * latent);
  b2_ = zero_bias(2 * latent);
}

DiagonalGaussian ModalityEncoder::encode(const Tensor& x) const {
  require(x.cols() == input_dim_, "encode: feature width " + std::to_string(x.cols()) +
                                      " differs from encoder input " + std::to_string(input_dim_));
  Tensor h = relu(add(matmul(x, w1_), b1_));
  Tensor out = add(matmul(h, w2_), b2_);
  Tensor mu = slice_cols(out, 0, latent_);
  Tensor lv = clamp(slice_cols(out, latent_, 2 * latent_), -kLogVarianceLimit, kLogVarianceLimit);
  return {mu, lv};
}

std::vector<NamedTensor> ModalityEncoder::named_parameters(const std::string& prefix) const {
  return {{prefix + ".w1", w1_}, {prefix + ".b1", b1_}, {prefix + ".w2", w2_}, {prefix + ".b2", b2_}};
}

// ---- Decoder ---------------------------------------------------------------------

Decoder::Decoder(Arity arity, std::size_t latent, std::size_t hidden, std::size_t out, Rng& rng)
    : arity_(arity), input_dim_(arity == Arity::joint ? 2 * latent : latent) {
  w1_ = xavier_uniform(rng, input_dim_, hidden);
  b1_ = zero_bias(hidden);
  w2_ = xavier_uniform(rng, hidden, out);
  b2_ = zero_bias(out);
}

Tensor Decoder::decode(const Tensor& z) const {
  require(z.cols() == input_dim_, "decode: latent width " + std::to_string(z.cols()) +
                                      " differs from decoder input " + std::to_string(input_dim_));
  return add(matmul(relu(add(matmul(z, w1_), b1_)), w2_), b2_);
}

std::vector<NamedTensor> Decoder::named_parameters(const std::string& prefix) const {
  return {{prefix + ".w1", w1_}, {prefix + ".b1", b1_}, {prefix + ".w2", w2_}, {prefix + ".b2", b2_}};
}

Tensor fuse(const Tensor& z1, const Tensor& z2) { return concat_cols(z1, z2); }

// ---- HostModel ---------------------------------------------------------------------

HostModel::HostModel(ModelConfig config, std::size_t n_users, std::size_t n_items,
                     const data::FeatureMatrix& visual, const data::FeatureMatrix& textual,
                     std::uint64_t seed)
    : config_(config), n_users_(n_users), n_items_(n_items) {
  require(n_users > 0 && n_items > 0, "HostModel: empty vocabulary");
  const Dims& d = config_.dims;
  require(d.latent > 0 && d.encoder_hidden > 0 && d.decoder_hidden > 0 && d.mine_hidden > 0,
          "HostModel: dimensions must be positive");
  visual_ = features_tensor(visual, n_items, "visual");
  textual_ = features_tensor(textual, n_items, "textual");

  const Rng root(seed);
  Rng r = root.fork(kUsers);
  user_emb_ = xavier_uniform(r, n_users, d.latent);
  r = root.fork(kItems);
  item_emb_ = xavier_uniform(r, n_items, d.latent);

  if (config_.variant == Variant::host_only) {
    r = root.fork(kProjection);
    projection_ = xavier_uniform(r, visual_.cols() + textual_.cols(), d.latent);
    return;
  }
  r = root.fork(kEncoderVisual);
  encoder_visual_.emplace(Modality::visual, visual_.cols(), d.encoder_hidden, d.latent, r);
  r = root.fork(kEncoderTextual);
  encoder_textual_.emplace(Modality::textual, textual_.cols(), d.encoder_hidden, d.latent, r);
  r = root.fork(kDecoderJoint);
  decoder_joint_.emplace(Decoder::Arity::joint, d.latent, d.decoder_hidden, d.latent, r);
  if (config_.variant == Variant::full) {
    r = root.fork(kDecoderVisual);
    decoder_visual_.emplace(Decoder::Arity::unimodal1, d.latent, d.decoder_hidden, d.latent, r);
    r = root.fork(kDecoderTextual);
    decoder_textual_.emplace(Decoder::Arity::unimodal2, d.latent, d.decoder_hidden, d.latent, r);
    r = root.fork(kMine);
    mine_.emplace(d.latent, d.latent, d.mine_hidden, r);
  }
}

const ModalityEncoder& HostModel::encoder(Modality m) const {
  require(has_encoders(), "HostModel: this variant has no encoders");
  return m == Modality::visual ? *encoder_visual_ : *encoder_textual_;
}

const Decoder& HostModel::decoder(Decoder::Arity a) const {
  switch (a) {
    case Decoder::Arity::joint:
      require(decoder_joint_.has_value(), "HostModel: this variant has no joint decoder");
      return *decoder_joint_;
    case Decoder::Arity::unimodal1:
      require(decoder_visual_.has_value(), "HostModel: this variant has no unimodal decoders");
      return *decoder_visual_;
    case Decoder::Arity::unimodal2:
      require(decoder_textual_.has_value(), "HostModel: this variant has no unimodal decoders");
      return *decoder_textual_;
  }
  throw ContractViolation("unknown decoder arity");
}

info::MineNetwork& HostModel::mine() {
  require(has_mine(), "HostModel: this variant has no statistics network");
  return *mine_;
}

const info::MineNetwork& HostModel::mine() const {
  require(has_mine(), "HostModel: this variant has no statistics network");
  return *mine_;
}

LatentPair HostModel::encode_items(std::span<const std::size_t> items, Rng& rng,
                                   info::SampleMode mode) const {
  require(has_encoders(), "encode_items: this variant has no encoders");
  const DiagonalGaussian q1 = encoder_visual_->encode(index_select_rows(visual_, items));
  const DiagonalGaussian q2 = encoder_textual_->encode(index_select_rows(textual_, items));
  check_posterior(q1, "visual");
  check_posterior(q2, "textual");
  LatentSample s1 = info::reparameterize(q1, rng, mode);
  LatentSample s2 = info::reparameterize(q2, rng, mode);
  return {std::move(s1), std::move(s2)};
}

Tensor HostModel::decode(const LatentPair& latents, ScoreMode mode) const {
  switch (mode) {
    case ScoreMode::joint:
      return decoder(Decoder::Arity::joint).decode(fuse(latents.visual.z, latents.textual.z));
    case ScoreMode::unimodal1:
      return decoder(Decoder::Arity::unimodal1).decode(latents.visual.z);
    case ScoreMode::unimodal2:
      return decoder(Decoder::Arity::unimodal2).decode(latents.textual.z);
    case ScoreMode::base:
      break;
  }
  throw ContractViolation("decode: base mode has no latent path");
}

Tensor HostModel::project_features(std::span<const std::size_t> items) const {
  require(projection_.has_value(), "base score requires the host-only variant");
  Tensor x = concat_cols(index_select_rows(visual_, items), index_select_rows(textual_, items));
  return matmul(x, *projection_);
}

std::vector<NamedTensor> HostModel::named_parameters() const {
  std::vector<NamedTensor> out{{"user_embedding", user_emb_}, {"item_embedding", item_emb_}};
  if (projection_) out.emplace_back("projection", *projection_);
  auto append = [&out](std::vector<NamedTensor> more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  if (encoder_visual_) append(encoder_visual_->named_parameters("encoder.visual"));
  if (encoder_textual_) append(encoder_textual_->named_parameters("encoder.textual"));
  if (decoder_joint_) append(decoder_joint_->named_parameters("decoder.joint"));
  if (decoder_visual_) append(decoder_visual_->named_parameters("decoder.visual"));
  if (decoder_textual_) append(decoder_textual_->named_parameters("decoder.textual"));
  return out;
}

std::vector<Tensor> HostModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<NamedTensor> HostModel::checkpoint_tensors() const {
  auto out = named_parameters();
  if (mine_) {
    static const char* names[] = {"mine.w1", "mine.b1", "mine.w2", "mine.b2", "mine.w3", "mine.b3"};
    const auto& p = mine_->parameters();
    for (std::size_t k = 0; k < p.size(); ++k) out.emplace_back(names[k], p[k]);
  }
  return out;
}

std::size_t HostModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : checkpoint_tensors()) n += t.size();
  return n;
}

std::vector<std::string> HostModel::components() const {
  std::vector<std::string> c{"user_embedding", "item_embedding"};
  if (projection_) c.push_back("projection");
  if (encoder_visual_) c.insert(c.end(), {"encoder.visual", "encoder.textual"});
  if (decoder_joint_) c.push_back("decoder.joint");
  if (decoder_visual_) c.insert(c.end(), {"decoder.visual", "decoder.textual"});
  if (mine_) c.push_back("mine");
  return c;
}

// ---- scoring -------------------------------------------------------------------------

Tensor score_pairs(const HostModel& host, std::span<const std::size_t> users,
                   std::span<const std::size_t> items, const Tensor& item_side,
                   std::span<const std::size_t> local) {
  require(users.size() == items.size() && items.size() == local.size(),
          "score_pairs: user/item/local lists differ in length");
  for (std::size_t u : users) require(u < host.n_users(), "score_pairs: unknown user index");
  for (std::size_t i : items) require(i < host.n_items(), "score_pairs: unknown item index");
  Tensor side = index_select_rows(item_side, local);
  Tensor item_vec = host.config().item_id_embedding
                        ? add(index_select_rows(host.item_embedding(), items), side)
                        : side;
  return row_sum(mul(index_select_rows(host.user_embedding(), users), item_vec));
}

namespace {

// item-side rows for the whole catalog, evaluated on posterior means
std::vector<double> catalog_side(const HostModel& host, ScoreMode mode) {
  NoGradGuard guard;
  std::vector<std::size_t> all(host.n_items());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Tensor side;
  if (mode == ScoreMode::base) {
    side = host.project_features(all);
  } else {
    Rng unused(0);
    side = host.decode(host.encode_items(all, unused, info::SampleMode::mean), mode);
  }
  return {side.values().begin(), side.values().end()};
}

}  // namespace

double score(const HostModel& host, std::size_t user, std::size_t item, ScoreMode mode) {
  require(user < host.n_users(), "score: unknown user index " + std::to_string(user));
  require(item < host.n_items(), "score: unknown item index " + std::to_string(item));
  NoGradGuard guard;
  const std::size_t one[] = {item};
  const std::size_t zero[] = {0};
  const std::size_t who[] = {user};
  Tensor side;
  if (mode == ScoreMode::base) {
    side = host.project_features(one);
  } else {
    Rng unused(0);
    side = host.decode(host.encode_items(one, unused, info::SampleMode::mean), mode);
  }
  return score_pairs(host, who, one, side, zero).item();
}

ScoreMatrixView::ScoreMatrixView(const HostModel& host, ScoreMode mode)
    : ScoreMatrixView(host, mode, host.config().item_id_embedding) {}

ScoreMatrixView::ScoreMatrixView(const HostModel& host, ScoreMode mode,
                                 bool include_item_embedding)
    : n_items_(host.n_items()), dim_(host.latent_dim()) {
  items_ = catalog_side(host, mode);
  if (include_item_embedding) {
    const auto e = host.item_embedding().values();
    for (std::size_t k = 0; k < items_.size(); ++k) items_[k] += e[k];
  }
  const auto u = host.user_embedding().values();
  users_.assign(u.begin(), u.end());
}

void ScoreMatrixView::row_into(std::size_t user, std::span<double> out) const {
  require(user < users_.size() / dim_, "ScoreMatrixView: unknown user index");
  require(out.size() == n_items_, "ScoreMatrixView: output size mismatch");
  const double* eu = users_.data() + user * dim_;
  for (std::size_t i = 0; i < n_items_; ++i) {
    const double* ei = items_.data() + i * dim_;
    double s = 0.0;
    for (std::size_t c = 0; c < dim_; ++c) s += eu[c] * ei[c];
    out[i] = s;
  }
}

std::vector<double> ScoreMatrixView::row(std::size_t user) const {
  std::vector<double> out(n_items_);
  row_into(user, out);
  return out;
}

std::vector<double> ScoreMatrixView::masked_row(std::size_t user,
                                                std::span<const std::size_t> mask) const {
  auto out = row(user);
  for (std::size_t i : mask) {
    require(i < n_items_, "ScoreMatrixView: mask item out of range");
    out[i] = -std::numeric_limits<double>::infinity();
  }
  return out;
}

std::vector<double> score_all(const HostModel& host, std::size_t user, ScoreMode mode) {
  return ScoreMatrixView(host, mode).row(user);
}

}  // namespace mrdib::model
