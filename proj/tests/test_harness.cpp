#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aaf/fsod/loss.hpp"
#include "aaf/fsod/param_io.hpp"
#include "aaf/fsod/trainer.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace aaf;
using namespace aaf::fsod;

namespace {

double sigmoid_of(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double focal_oracle(double logit, bool positive) {
  const double p = sigmoid_of(logit);
  return positive ? -kFocalAlpha * (1 - p) * (1 - p) * std::log(p)
                  : -(1 - kFocalAlpha) * p * p * std::log(1 - p);
}

// Raw head row that decodes exactly to `box` from cell p.
void encode_row(Tensor& raw, const Grid& g, std::size_t p, const BoundingBox& box, double logit) {
  auto d = raw.mutable_data().subspan(p * kHeadColumns, kHeadColumns);
  d[kLogit] = logit;
  d[kLeft] = std::log((g.center_x(p) - box.x_min) / g.stride);
  d[kTop] = std::log((g.center_y(p) - box.y_min) / g.stride);
  d[kRight] = std::log((box.x_max - g.center_x(p)) / g.stride);
  d[kBottom] = std::log((box.y_max - g.center_y(p)) / g.stride);
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / (std::string("aaf_test_") + name);
}

}  // namespace

TEST_CASE("backbone") {
  Rng rng(51);
  const Backbone net = Backbone::init({}, rng);
  CHECK(net.stride() == 8);
  CHECK(net.channels() == 64);
  CHECK(net.forward(test::random_tensor(rng, {64, 64, 3}, 0, 1)).shape() == Shape{64, 64});
  CHECK(net.forward(test::random_tensor(rng, {32, 32, 3}, 0, 1)).shape() == Shape{16, 64});

  BackboneSpec two;
  two.second_level = true;
  const auto levels = Backbone::init(two, rng).forward_levels(test::random_tensor(rng, {64, 64, 3}));
  REQUIRE(levels.size() == 2);
  CHECK(levels[1].shape() == Shape{16, 64});

  SUBCASE("gradients") {
    BackboneSpec tiny;
    tiny.widths = {3, 3, 4, 2};
    tiny.second_level = true;
    const Backbone small = Backbone::init(tiny, rng);
    const Tensor image = test::random_tensor(rng, {16, 16, 3}, 0, 1);
    const auto shapes = small.forward_levels(image);
    const Tensor r0 = test::random_tensor(rng, shapes[0].shape());
    const Tensor r1 = test::random_tensor(rng, shapes[1].shape());
    std::vector<NamedParam> named;
    small.append_named(named, "backbone.");
    CHECK(named.front().name == "backbone.conv0.weight");
    const GradcheckReport report = gradcheck_params(
        [&] {
          const auto out = small.forward_levels(image);
          return add(sum(mul(out[0], r0)), sum(mul(out[1], r1)));
        },
        named);
    INFO(report.worst_param);
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("head decoding") {
  const Grid grid;
  const Head head = Head::zeros(64, 32);
  const Tensor raw = head.forward(Tensor::zeros({64, 64}));
  REQUIRE(raw.shape() == Shape{64, 5});
  const auto boxes = decode(raw, grid, 64.0);
  REQUIRE(boxes.size() == 64);
  for (const ScoredBox& b : boxes) CHECK(b.score == doctest::Approx(0.5));
  // exp(0) = 1: every box spans one stride on each side of its cell center.
  CHECK(boxes[0].box == BoundingBox{0, 0, 12, 12});
  CHECK(boxes[9].box == BoundingBox{4, 4, 20, 20});
  CHECK(decode(raw, grid, 64.0, 0.6).empty());

  Rng rng(52);
  const Head init = Head::init(64, 32, rng);
  const Tensor r = init.forward(Tensor::zeros({64, 64}));
  CHECK(sigmoid_of(r.at(0, kLogit)) == doctest::Approx(0.01).epsilon(1e-9));
  CHECK_THROWS_AS(decode(Tensor::zeros({63, 5}), grid, 64.0), ShapeError);
}

TEST_CASE("target assignment") {
  const Grid grid;
  // Cell centers sit at 4, 12, 20, ...
  const BoundingBox big{2, 2, 30, 30}, small{10, 10, 14, 14};
  const BoundingBox both[] = {big, small};
  const auto t = assign_targets(both, grid);
  CHECK(t[0].positive);
  CHECK(t[0].box == big);
  CHECK(t[9].positive);
  CHECK(t[9].box == small);  // smallest box wins
  CHECK_FALSE(t[4].positive);
  // A center exactly on the border does not count.
  const BoundingBox edge[] = {BoundingBox{4, 4, 11, 11}};
  CHECK_FALSE(assign_targets(edge, grid)[0].positive);
}

TEST_CASE("detection loss") {
  const Grid grid{2, 2, 8.0};
  Rng rng(53);

  SUBCASE("focal term against the closed form") {
    const Tensor raw = test::random_tensor(rng, {4, 5}, -3, 3);
    std::vector<CellTarget> targets(4);
    targets[1].positive = true;
    targets[1].box = {1, 1, 15, 15};
    double expected = 0.0;
    for (std::size_t p = 0; p < 4; ++p) expected += focal_oracle(raw.at(p, kLogit), p == 1);
    CHECK(focal_loss_sum(raw, targets).item() == doctest::Approx(expected).epsilon(1e-12));

    BoundingBox pred = decode_cell(raw.data().subspan(5, 5), grid, 1);
    CHECK(iou_loss_sum(raw, targets, grid).item() ==
          doctest::Approx(-std::log(compute_iou(pred, targets[1].box))).epsilon(1e-12));
  }
  SUBCASE("gradients") {
    const Tensor raw = test::random_tensor(rng, {4, 5}, -1, 1);
    std::vector<CellTarget> targets(4);
    targets[0] = {true, {1, 2, 9, 7}};
    targets[3] = {true, {9, 10, 15, 14.5}};
    CHECK(gradcheck([&](const Tensor& x) { return focal_loss_sum(x, targets); }, raw) <= 1e-4);
    CHECK(gradcheck([&](const Tensor& x) { return iou_loss_sum(x, targets, grid); }, raw) <= 1e-4);
  }
  SUBCASE("perfect predictions cost almost nothing") {
    const Grid g;
    const BoundingBox box{5, 6, 27, 25};
    const BoundingBox boxes[] = {box};
    const auto targets = assign_targets(boxes, g);
    Tensor raw = Tensor::zeros({64, 5});
    for (std::size_t p = 0; p < 64; ++p) {
      if (targets[p].positive) encode_row(raw, g, p, box, 20.0);
      else raw.mutable_data()[p * kHeadColumns + kLogit] = -20.0;
    }
    const DetectionLoss loss = detection_loss({{0, raw}}, {{0, targets}}, g);
    CHECK(loss.positives == 4);
    CHECK(loss.total.item() <= 1e-3);
    CHECK(loss.total.item() >= 0.0);
  }
  SUBCASE("a scene without objects has no regression term") {
    const Tensor raw = test::random_tensor(rng, {4, 5});
    const std::vector<CellTarget> none(4);
    CHECK(iou_loss_sum(raw, none, grid).item() == 0.0);
    const DetectionLoss loss = detection_loss({{2, raw}}, {{2, none}}, grid);
    CHECK(loss.positives == 0);
    CHECK(loss.total.item() == doctest::Approx(focal_loss_sum(raw, none).item()));
  }
}

TEST_CASE("detector") {
  Rng rng(54);
  for (const std::string& name : preset_names()) {
    INFO(name);
    DetectorConfig config;
    config.pipeline = preset(name);
    const Detector det = Detector::init(config, rng);
    const std::vector<int> pool = {0, 1};
    std::map<int, std::vector<SupportCrop>> support;
    support[0] = sample_support(rng, 0, pool, 2);
    support[1] = sample_support(rng, 1, pool, 2);
    const SyntheticScene scene = generate_scene(rng, std::vector<int>{0, 1});
    std::vector<ClassSupports> encoded;
    {
      NoGradScope off;
      encoded = det.encode_support(support);
    }
    const auto out = det.forward(scene.image, encoded);
    REQUIRE(out.size() == 1);
    CHECK(out[0].size() == 2);
    for (const auto& [cls, raw] : out[0]) CHECK(raw.shape() == Shape{64, 5});
    const auto dets = det.detect(scene.image, encoded, 3);
    for (const auto& [cls, list] : dets)
      for (const Detection& d : list) CHECK(d.image == 3);

    bool named_backbone = false, named_head = false;
    for (const NamedParam& p : det.params()) {
      named_backbone |= p.name.starts_with("backbone.");
      named_head |= p.name.starts_with("head.");
    }
    CHECK(named_backbone);
    CHECK(named_head);
    CHECK(det.params().size() == det.tensors().size());
  }
}

TEST_CASE("training lowers the loss on a fixed batch") {
  Rng rng(55);
  DetectorConfig config;
  config.pipeline = preset("frw");
  const Detector det = Detector::init(config, rng);
  const std::vector<int> classes = {0, 3};
  std::map<int, std::vector<SupportCrop>> support;
  for (int c : classes) support[c] = sample_support(rng, c, classes, 1);
  std::vector<SyntheticScene> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(generate_scene(rng, classes));
  Sgd sgd(0.9);
  const double first = train_step(det, sgd, batch, support, 1e-2);
  double last = first;
  for (int i = 0; i < 100; ++i) last = train_step(det, sgd, batch, support, 1e-2);
  CHECK(last < 0.5 * first);
}

TEST_CASE("divergence is reported") {
  Rng rng(56);
  DetectorConfig config;
  config.pipeline = preset("drl");
  const Detector det = Detector::init(config, rng);
  std::map<int, std::vector<SupportCrop>> support;
  support[0] = sample_support(rng, 0, std::vector<int>{0}, 1);
  const std::vector<SyntheticScene> batch = {generate_scene(rng, std::vector<int>{0})};
  Sgd sgd;
  // The first step still sees finite weights; the blown-up ones surface next.
  CHECK_NOTHROW(train_step(det, sgd, batch, support, 1e300));
  CHECK_THROWS_AS(
      for (int i = 0; i < 3; ++i) train_step(det, sgd, batch, support, 1e300), DivergenceError);
}

TEST_CASE("parameter files") {
  Rng rng(57);
  DetectorConfig config;
  config.pipeline = preset("mfrcn_lite");
  const Detector a = Detector::init(config, rng);
  const Detector b = Detector::init(config, rng);
  const auto path = temp_file("params.bin");
  save_params(path, a.params());
  load_params(path, b.params());
  const auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(same_values(pa[i].value, pb[i].value));

  DetectorConfig other;
  other.pipeline = preset("frw");
  CHECK_THROWS_AS(load_params(path, Detector::init(other, rng).params()), ParamIoError);
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f << "x";
  }
  CHECK_THROWS_AS(load_params(path, b.params()), ParamIoError);
  CHECK_THROWS_AS(load_params(temp_file("missing.bin"), b.params()), ParamIoError);
  std::filesystem::remove(path);
}

TEST_CASE("reports") {
  EvalReport r;
  r.method = "drl";
  r.k = 5;
  r.seed = 7;
  r.support_seeds = {0, 1};
  r.class_ap = {{0, 0.5}, {3, 0.25}};
  r.base_classes = {0};
  r.novel_classes = {3};
  r.base_map = 0.5;
  r.novel_map = 0.25;
  r.novel_map_std = 0.125;
  const EvalReport back = report_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));

  std::ostringstream os;
  write_text(os, r);
  CHECK(os.str().find("novel_map: 0.250000\n") != std::string::npos);
  CHECK(os.str().find("ap.blue_disk: 0.250000\n") != std::string::npos);

  const LogRow row{12, "base", 0.5, false, 0, 0, 1, 3};
  CHECK(csv_line(row) == "12,base,0.500000,,,1,3");
  const LogRow evaluated{4, "finetune", 1.25, true, 0.5, 0.75, 5, 0};
  CHECK(csv_line(evaluated) == "4,finetune,1.250000,0.500000,0.750000,5,0");
}

TEST_CASE("train and evaluate") {
  Schedule s;
  s.base_episodes = 2;
  s.queries_per_class = 2;
  s.n_way = 3;
  s.batch_size = 3;
  s.base_lr = 1e-2;
  s.finetune_lr = 1e-3;
  s.finetune_updates = 3;
  s.eval.images = 6;
  s.eval_every = 1;
  DetectorConfig config;
  config.pipeline = preset("frw");
  const ClassSplit split = ClassSplit::standard();

  const TrainResult a = train(config, split, s, 1, 9);
  const TrainResult b = train(config, split, s, 1, 9);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(csv_line(a.log[i]) == csv_line(b.log[i]));
  const auto pa = a.detector.params(), pb = b.detector.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(same_values(pa[i].value, pb[i].value));

  std::size_t base_rows = 0, ft_rows = 0;
  for (const LogRow& row : a.log) (row.phase == "base" ? base_rows : ft_rows) += 1;
  CHECK(base_rows == 2);
  CHECK(ft_rows >= 1);

  const EvalReport r = evaluate(a.detector, split, a.registry, 1, s.eval);
  CHECK(r.class_ap.size() == 10);
  double base = 0, novel = 0;
  for (int c : split.base) base += r.class_ap.at(c);
  for (int c : split.novel) novel += r.class_ap.at(c);
  CHECK(r.base_map == doctest::Approx(base / 7));
  CHECK(r.novel_map == doctest::Approx(novel / 3));
  for (const auto& [c, ap] : r.class_ap) {
    CHECK(ap >= 0.0);
    CHECK(ap <= 1.0);
  }
  CHECK_THROWS_AS(evaluate(a.detector, split, a.registry, 2, s.eval), std::invalid_argument);
}
