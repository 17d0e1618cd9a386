#include "tsca/config.hpp"

namespace tsca {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const EncoderConfig& c) {
  return ordered_json{{"seq_len", c.seq_len},
                      {"patch_len", c.patch_len},
                      {"cnn_kernel", c.cnn_kernel},
                      {"cnn_pad", c.cnn_pad},
                      {"cnn_channels", c.cnn_channels},
                      {"cls_tokens", c.cls_tokens},
                      {"token_dim", c.token_dim},
                      {"layers", c.layers},
                      {"heads", c.heads},
                      {"head_dim", c.head_dim},
                      {"mlp_dim", c.mlp_dim},
                      {"stat_dim", c.stat_dim},
                      {"proj_hidden", c.proj_hidden},
                      {"proj_out", c.proj_out}};
}

ordered_json to_json(const TrainConfig& c) {
  return ordered_json{{"lr", c.lr},
                      {"epochs", c.epochs},
                      {"batch", c.batch},
                      {"warmup_epochs", c.warmup_epochs},
                      {"temperature", c.temperature},
                      {"weight_decay", c.weight_decay},
                      {"beta1", c.beta1},
                      {"beta2", c.beta2},
                      {"adam_eps", c.adam_eps},
                      {"seed", c.seed},
                      {"symmetric_loss", c.symmetric_loss},
                      {"drop_last", c.drop_last}};
}

ordered_json to_json(const CropResizeConfig& c) {
  return ordered_json{
      {"scale_min", c.scale_min}, {"scale_max", c.scale_max}, {"out_len", c.out_len}};
}

ordered_json to_json(const CAConfig& c) {
  return ordered_json{{"draws", c.draws}, {"eval_batch", c.eval_batch}, {"seed", c.seed}};
}

ordered_json to_json(const ProbeConfig& c) {
  return ordered_json{{"lr", c.lr},
                      {"epochs", c.epochs},
                      {"batch", c.batch},
                      {"warmup_epochs", c.warmup_epochs},
                      {"weight_decay", c.weight_decay},
                      {"beta1", c.beta1},
                      {"beta2", c.beta2},
                      {"adam_eps", c.adam_eps},
                      {"freeze_encoder", c.freeze_encoder},
                      {"seed", c.seed}};
}

namespace {

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

void merge_config(const json& j, EncoderConfig& c) {
  read_if(j, "seq_len", c.seq_len);
  read_if(j, "patch_len", c.patch_len);
  read_if(j, "cnn_kernel", c.cnn_kernel);
  read_if(j, "cnn_pad", c.cnn_pad);
  read_if(j, "cnn_channels", c.cnn_channels);
  read_if(j, "cls_tokens", c.cls_tokens);
  read_if(j, "token_dim", c.token_dim);
  read_if(j, "layers", c.layers);
  read_if(j, "heads", c.heads);
  read_if(j, "head_dim", c.head_dim);
  read_if(j, "mlp_dim", c.mlp_dim);
  read_if(j, "stat_dim", c.stat_dim);
  read_if(j, "proj_hidden", c.proj_hidden);
  read_if(j, "proj_out", c.proj_out);
}

void merge_config(const json& j, TrainConfig& c) {
  read_if(j, "lr", c.lr);
  read_if(j, "epochs", c.epochs);
  read_if(j, "batch", c.batch);
  read_if(j, "warmup_epochs", c.warmup_epochs);
  read_if(j, "temperature", c.temperature);
  read_if(j, "weight_decay", c.weight_decay);
  read_if(j, "beta1", c.beta1);
  read_if(j, "beta2", c.beta2);
  read_if(j, "adam_eps", c.adam_eps);
  read_if(j, "seed", c.seed);
  read_if(j, "symmetric_loss", c.symmetric_loss);
  read_if(j, "drop_last", c.drop_last);
}

void merge_config(const json& j, CropResizeConfig& c) {
  read_if(j, "scale_min", c.scale_min);
  read_if(j, "scale_max", c.scale_max);
  read_if(j, "out_len", c.out_len);
}

void merge_config(const json& j, CAConfig& c) {
  read_if(j, "draws", c.draws);
  read_if(j, "eval_batch", c.eval_batch);
  read_if(j, "seed", c.seed);
}

void merge_config(const json& j, ProbeConfig& c) {
  read_if(j, "lr", c.lr);
  read_if(j, "epochs", c.epochs);
  read_if(j, "batch", c.batch);
  read_if(j, "warmup_epochs", c.warmup_epochs);
  read_if(j, "weight_decay", c.weight_decay);
  read_if(j, "beta1", c.beta1);
  read_if(j, "beta2", c.beta2);
  read_if(j, "adam_eps", c.adam_eps);
  read_if(j, "freeze_encoder", c.freeze_encoder);
  read_if(j, "seed", c.seed);
}

}  // namespace tsca
