#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "memeface/checkpoint.hpp"
#include "memeface/dataset.hpp"
#include "memeface/http_server.hpp"
#include "memeface/image.hpp"
#include "memeface/model.hpp"
#include "memeface/pipeline.hpp"
#include "memeface/service.hpp"
#include "memeface/synthetic.hpp"
#include "memeface/trainer.hpp"

namespace fs = std::filesystem;
using namespace memeface;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

service::HttpServer* g_server = nullptr;
extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

struct ToyArgs {
  fs::path out;
  synthetic::ToyCorpusConfig config;
};

struct CurateArgs {
  fs::path input, captions, out, damsm;
  pipeline::PipelineConfig config;
};

struct PretrainArgs {
  fs::path data, out, model_config, vocab_out;
  DamsmTrainConfig train;
};

struct TrainArgs {
  fs::path data, damsm, out, config, log;
  std::optional<int> epochs, batch, period, checkpoint_period;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::string schedule;
};

struct ServeArgs {
  service::ServiceConfig config;
  int template_id = -1;
};

struct GenerateArgs {
  service::ServiceConfig config;
  std::string text;
  int template_id = -1;
  std::uint64_t seed = 0;
  fs::path out;
};

void add_service_options(CLI::App* app, service::ServiceConfig& c, int& template_id) {
  app->add_option("--checkpoints", c.checkpoint_dir, "Directory of *.ckpt files")->required();
  app->add_option("--vocab", c.vocab_path, "Vocabulary file (default: <checkpoints>/vocab.txt)");
  app->add_option("--templates", c.template_dir, "Curated dataset directory holding clusters.json")->required();
  app->add_option("--cache", c.cache_size, "Checkpoints kept in memory")->capture_default_str();
  app->add_option("--resolution", c.output_resolution, "Upscale output to this size (0 keeps model size)")
      ->capture_default_str();
  app->add_option("--template", template_id, "Default template id");
}

void finish_service_config(service::ServiceConfig& c, int template_id) {
  if (c.vocab_path.empty()) c.vocab_path = c.checkpoint_dir / "vocab.txt";
  if (template_id >= 0) c.default_template = template_id;
}

int run_curate(const CurateArgs& a) {
  pipeline::TsvCaptionSource captions(a.captions.empty() ? a.input / "captions.tsv" : a.captions);
  std::unique_ptr<pipeline::FeatureExtractor> extractor;
  if (a.damsm.empty()) {
    extractor = std::make_unique<pipeline::PixelGridExtractor>();
  } else {
    extractor = std::make_unique<pipeline::EncoderFeatureExtractor>(damsm_from_checkpoint(load_checkpoint(a.damsm)));
  }
  const auto report = pipeline::run_pipeline(a.input, &captions, *extractor, a.config, a.out);
  std::printf("ingested %zu, text filters %zu, outliers %zu, clusters %zu, train %zu, test %zu\n", report.ingested,
              report.after_text_filters, report.after_outliers, report.clusters, report.train, report.test);
  return 0;
}

int run_pretrain(PretrainArgs a) {
  ModelConfig config;
  if (!a.model_config.empty()) config = read_json(a.model_config).get<ModelConfig>();
  auto ds = load_curated(a.data, config, "train");
  DamsmModel model(config, a.train.seed);
  const auto report = pretrain_damsm(model, ds.damsm_samples, a.train, [](int epoch, double loss) {
    std::fprintf(stderr, "epoch %d loss %.6f\n", epoch, loss);
  });
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_checkpoint(damsm_checkpoint(model, a.train.epochs), a.out);
  const fs::path vocab_out = a.vocab_out.empty() ? a.out.parent_path() / "vocab.txt" : a.vocab_out;
  ds.vocab.save(vocab_out);

  std::vector<Tensor> images;
  std::vector<Caption> captions;
  for (const auto& s : ds.damsm_samples) {
    images.push_back(s.image);
    captions.push_back(s.caption);
  }
  const std::size_t k = std::min<std::size_t>(4, images.size());
  std::printf("loss %.6f -> %.6f, R@1 (K=%zu) %.3f on %zu samples\n", report.initial_loss, report.final_loss, k,
              r_precision(model, images, captions, k, a.train.seed), images.size());
  return 0;
}

int run_train(const TrainArgs& a) {
  TrainConfig config;
  if (!a.config.empty()) config = read_json(a.config).get<TrainConfig>();
  if (a.epochs) config.epochs = *a.epochs;
  if (a.batch) config.batch_size = *a.batch;
  if (a.period) config.generator_update_period_epochs = *a.period;
  if (a.checkpoint_period) config.checkpoint_period_epochs = *a.checkpoint_period;
  if (a.lr) config.learning_rate = *a.lr;
  if (a.seed) config.seed = *a.seed;
  if (a.schedule == "epoch_periodic") config.schedule = UpdateSchedule::EpochPeriodic;
  if (a.schedule == "per_batch_alternating") config.schedule = UpdateSchedule::PerBatchAlternating;

  DamsmModel damsm = damsm_from_checkpoint(load_checkpoint(a.damsm));
  const fs::path vocab_path = a.damsm.parent_path() / "vocab.txt";
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  config.model = damsm.config;
  auto ds = load_curated(a.data, config.model, "train", &vocab);
  config.validate();

  fs::create_directories(a.out);
  vocab.save(a.out / "vocab.txt");
  std::ofstream log(a.log.empty() ? a.out / "train.jsonl" : a.log);
  Trainer trainer(config, std::move(ds.data), damsm);
  trainer.run(a.out, &log, [](const EpochSummary& s) {
    std::fprintf(stderr, "epoch %d d_loss %.5f", s.epoch, s.discriminator_loss);
    if (s.generator_loss) std::fprintf(stderr, " g_loss %.5f", *s.generator_loss);
    if (s.checkpoint) std::fprintf(stderr, " -> %s", s.checkpoint->filename().string().c_str());
    std::fprintf(stderr, "\n");
  });
  return 0;
}

int run_serve(ServeArgs a) {
  finish_service_config(a.config, a.template_id);
  service::DemoService svc(a.config);
  service::HttpServer server(svc);
  const int port = server.bind(a.config.host, a.config.port);
  std::cerr << "listening on http://" << a.config.host << ":" << port << "  " << svc.health().dump() << "\n";
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.serve();
  g_server = nullptr;
  return 0;
}

int run_generate(GenerateArgs a) {
  finish_service_config(a.config, a.template_id);
  service::DemoService svc(a.config);
  service::GenerateRequest req{a.text, std::nullopt, a.seed, false};
  if (a.template_id >= 0) req.template_id = a.template_id;
  fs::create_directories(a.out);
  const auto r = svc.generate(req, [&](const service::Frame* f, const std::string& line) {
    std::cerr << line << "\n";
    if (!f) return;
    const auto bytes = service::base64_decode(f->image_b64);
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04lld.png", static_cast<long long>(f->epoch));
    write_file_atomic(a.out / name, bytes);
  });
  std::printf("%zu frames at %dx%d in %s\n", r.frames.size(), r.resolution, r.resolution, a.out.string().c_str());
  return 0;
}

int run_checkpoints(const fs::path& dir) {
  for (const auto& c : service::list_checkpoints(dir)) {
    std::printf("%6lld  %s  %s\n", static_cast<long long>(c.epoch), c.digest.c_str(), c.path.filename().string().c_str());
  }
  return 0;
}

int run_aggregate(const fs::path& path) {
  const auto records = read_annotations(path);
  const auto s = aggregate_annotations(records);
  for (int label = 2; label >= 0; --label) {
    std::printf("label %d: %zu (%.1f%%)\n", label, s.counts[static_cast<std::size_t>(label)],
                s.percent[static_cast<std::size_t>(label)]);
  }
  std::printf(">=1: %.1f%% of %zu\n", s.at_least_one_percent, s.total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memeface: template-conditioned text-to-image GAN"};
  app.require_subcommand(1);

  ToyArgs toy;
  auto* toy_cmd = app.add_subcommand("make-toy-corpus", "Write a synthetic captioned image folder");
  toy_cmd->add_option("--out", toy.out)->required();
  toy_cmd->add_option("--images", toy.config.images)->capture_default_str();
  toy_cmd->add_option("--templates", toy.config.templates)->capture_default_str();
  toy_cmd->add_option("--resolution", toy.config.resolution)->capture_default_str();
  toy_cmd->add_option("--seed", toy.config.seed)->capture_default_str();

  CurateArgs cur;
  auto* cur_cmd = app.add_subcommand("curate", "Cluster, filter, crop and split a raw meme folder");
  cur_cmd->add_option("--input", cur.input, "Folder of *.png (or an existing curated folder)")->required();
  cur_cmd->add_option("--captions", cur.captions, "TSV of name<TAB>caption (default: <input>/captions.tsv)");
  cur_cmd->add_option("--out", cur.out)->required();
  cur_cmd->add_option("--damsm", cur.damsm, "Use this DAMSM image encoder for clustering features");
  cur_cmd->add_option("-k,--clusters", cur.config.k)->capture_default_str();
  cur_cmd->add_option("--resolution", cur.config.resolution)->capture_default_str();
  cur_cmd->add_option("--band", cur.config.band_fraction, "Caption band height fraction")->capture_default_str();
  cur_cmd->add_option("--min-len", cur.config.min_len)->capture_default_str();
  cur_cmd->add_option("--max-len", cur.config.max_len)->capture_default_str();
  cur_cmd->add_option("--ppl-low", cur.config.ppl_low)->capture_default_str();
  cur_cmd->add_option("--ppl-high", cur.config.ppl_high)->capture_default_str();
  cur_cmd->add_option("--outlier-z", cur.config.outliers.z_threshold)->capture_default_str();
  cur_cmd->add_option("--min-cluster", cur.config.outliers.min_cluster_size)->capture_default_str();
  cur_cmd->add_option("--train-fraction", cur.config.train_fraction)->capture_default_str();
  cur_cmd->add_option("--seed", cur.config.seed)->capture_default_str();

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain-damsm", "Pretrain the image-text matching model");
  pre_cmd->add_option("--data", pre.data, "Curated dataset directory")->required();
  pre_cmd->add_option("--out", pre.out, "DAMSM checkpoint file")->required();
  pre_cmd->add_option("--model-config", pre.model_config, "JSON with network geometry");
  pre_cmd->add_option("--vocab-out", pre.vocab_out, "Default: vocab.txt next to --out");
  pre_cmd->add_option("--epochs", pre.train.epochs)->capture_default_str();
  pre_cmd->add_option("--batch", pre.train.batch_size)->capture_default_str();
  pre_cmd->add_option("--lr", pre.train.learning_rate)->capture_default_str();
  pre_cmd->add_option("--seed", pre.train.seed)->capture_default_str();

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Adversarial training with periodic checkpoints");
  tr_cmd->add_option("--data", tr.data, "Curated dataset directory")->required();
  tr_cmd->add_option("--damsm", tr.damsm, "Pretrained DAMSM checkpoint (vocab.txt alongside)")->required();
  tr_cmd->add_option("--out", tr.out, "Checkpoint directory")->required();
  tr_cmd->add_option("--config", tr.config, "TrainConfig JSON");
  tr_cmd->add_option("--log", tr.log, "Per-batch JSONL log (default: <out>/train.jsonl)");
  tr_cmd->add_option("--epochs", tr.epochs);
  tr_cmd->add_option("--batch", tr.batch);
  tr_cmd->add_option("--lr", tr.lr);
  tr_cmd->add_option("--generator-period", tr.period);
  tr_cmd->add_option("--checkpoint-period", tr.checkpoint_period);
  tr_cmd->add_option("--schedule", tr.schedule)->check(CLI::IsMember({"epoch_periodic", "per_batch_alternating"}));
  tr_cmd->add_option("--seed", tr.seed);

  ServeArgs srv;
  auto* srv_cmd = app.add_subcommand("serve", "HTTP demo service");
  add_service_options(srv_cmd, srv.config, srv.template_id);
  srv_cmd->add_option("--host", srv.config.host)->capture_default_str();
  srv_cmd->add_option("--port", srv.config.port, "0 picks a free port")->capture_default_str();

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Run one prompt through every checkpoint, writing PNGs");
  add_service_options(gen_cmd, gen.config, gen.template_id);
  gen_cmd->add_option("--text", gen.text)->required();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out)->required();

  fs::path ckpt_dir;
  auto* ck_cmd = app.add_subcommand("checkpoints", "List GAN checkpoints with digests");
  ck_cmd->add_option("dir", ckpt_dir)->required();

  fs::path annotations;
  auto* agg_cmd = app.add_subcommand("aggregate", "Majority-vote annotation ratios");
  agg_cmd->add_option("file", annotations, "TSV: sample id then labels in {0,1,2}")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy_cmd) {
      synthetic::write_toy_corpus(toy.out, toy.config);
      return 0;
    }
    if (*cur_cmd) return run_curate(cur);
    if (*pre_cmd) return run_pretrain(pre);
    if (*tr_cmd) return run_train(tr);
    if (*srv_cmd) return run_serve(srv);
    if (*gen_cmd) return run_generate(gen);
    if (*ck_cmd) return run_checkpoints(ckpt_dir);
    if (*agg_cmd) return run_aggregate(annotations);
  } catch (const service::ServiceError& e) {
    std::cerr << "error (" << e.status() << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
