#include <string>

#include "aaf/config_dsl.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace aaf;
using namespace aaf::config;
using Op = FusionComponent::Op;

namespace {

ConfigError error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e;
  }
  FAIL("accepted: " << text);
  return ConfigError(0, 0, "");
}

}  // namespace

TEST_CASE("parse examples") {
  CHECK(parse("attention.query = support_pool_reweight(max)\n") == preset("frw"));
  CHECK(parse("fusion = [mul, sub, id]").fusion == preset("drl").fusion);

  const ConfigError e = error_of("# drl-like\n\nfusion = [mull]\n");
  CHECK(e.line() == 3);
  CHECK(e.column() == 11);
  CHECK(std::string(e.what()).find("unknown operator") != std::string::npos);
}

TEST_CASE("sections, comments and shorthands") {
  const PipelineConfig c = parse(R"(
# mfrcn-like
[pipeline]
order = attend_then_align   # trailing comment
shots_aggregation = mean_outputs
[alignment]
support = softmax_dot(0.125)
[attention]
query = similarity_reweight
[fusion]
components = [learnable(sub), learnable(cat)]
)");
  CHECK(c.order == Order::AttendThenAlign);
  CHECK(c.shots_aggregation == ShotsAggregation::MeanOutputs);
  CHECK(c.alignment.support == AffinityKind::softmax_dot(0.125));
  CHECK(c.attention.query == AttentionKind::similarity_reweight());
  CHECK(c.fusion.components == std::vector<FusionComponent>{{Op::Sub, true}, {Op::Cat, true}});

  CHECK(parse("").fusion.arity() == 0);
  CHECK(parse("order = attend_then_align").order == Order::AttendThenAlign);
  CHECK(parse("fusion = []").fusion.arity() == 0);
  CHECK(parse("alignment.support_pool = avg\nfusion = [mul, sub, id]") == preset("drl"));
}

TEST_CASE("rejections carry a line and a reason") {
  struct Case {
    const char* text;
    int line;
    const char* fragment;
  };
  const Case cases[] = {
      {"[fusion]\ncomponents = [mul]\n[fusion]\n", 3, "duplicate section"},
      {"[fusion]\n# nothing\n", 1, "missing required key"},
      {"[alignment]\nquery = identity\nquery = dot_product", 3, "duplicate key"},
      {"[attention]\nquerry = none", 2, "unknown key"},
      {"[heads]", 1, "unknown section"},
      {"[fusion", 1, "malformed section header"},
      {"attention.query none", 1, "missing '='"},
      {"attention.query =", 1, "missing value"},
      {"alignment.query = softmax_dot(-1)", 1, "invalid scale"},
      {"alignment.query = softmax_dot(0)", 1, "invalid scale"},
      {"alignment.query = softmax_dot(1e999)", 1, "invalid scale"},
      {"alignment.query = softmax_dot(1", 1, "unexpected end of line"},
      {"alignment.query = identity identity", 1, "trailing"},
      {"\n\nattention.query = none $", 3, "lexical error"},
      {"alignment.support = dot_product\nalignment.support_pool = max", 2, "requires"},
      {"fusion = [mul,, sub]", 1, "unexpected"},
      {"fusion = [learnable(mull)]", 1, "unknown operator"},
      {"attention.query = support_pool_reweight(min)", 1, "unknown operator"},
      {"query = identity", 1, "unknown key"},
  };
  for (const Case& c : cases) {
    INFO(c.text);
    const ConfigError e = error_of(c.text);
    CHECK(e.line() == c.line);
    CHECK(e.column() >= 1);
    CHECK(std::string(e.what()).find(c.fragment) != std::string::npos);
  }
}

TEST_CASE("canonical printing round-trips") {
  for (const std::string& name : preset_names()) {
    INFO(name);
    const std::string text = print_config(preset(name));
    CHECK(parse(text) == preset(name));
    CHECK(print_config(parse(text)) == text);
  }
  // Key order in the source does not change the canonical text.
  const PipelineConfig a = parse("[fusion]\ncomponents = [cat]\n[attention]\nsupport = "
                                 "background_attenuation\n[alignment]\nsupport = "
                                 "softmax_dot(0.125)\n[pipeline]\norder = attend_then_align\n");
  CHECK(print_config(a) == print_config(preset("dana_lite")));

  Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    const PipelineConfig c = test::random_config(rng);
    const std::string text = print_config(c);
    INFO(text);
    REQUIRE(parse(text) == c);
  }
}

TEST_CASE("mutated sources fail with structured errors") {
  Rng rng(22);
  int rejected = 0;
  for (int i = 0; i < 2000; ++i) {
    const std::string source = test::mutate(rng, print_config(test::random_config(rng)));
    try {
      parse(source);
    } catch (const ConfigError& e) {
      ++rejected;
      CHECK(e.line() >= 1);
    }
  }
  CHECK(rejected > 1000);
}

TEST_CASE("extents") {
  CHECK(parse_extent("8x8x64")->positions == 64);
  CHECK(parse_extent("8x8x64")->channels == 64);
  CHECK(parse_extent("9x32")->positions == 9);
  CHECK_FALSE(parse_extent("8x8x"));
  CHECK_FALSE(parse_extent("64"));
  CHECK_FALSE(parse_extent("0x4"));
  CHECK_FALSE(parse_extent("1x2x3x4"));
}

TEST_CASE("check_shapes") {
  CHECK_FALSE(check_shapes(preset("drl"), {64, 64}, {9, 64}));

  PipelineConfig mul_only;
  mul_only.fusion.components = {{Op::Mul, false}};
  const ParsedConfig parsed = parse_source("\n\nfusion = [mul]\n");
  const auto e = check_shapes(parsed.config, {64, 64}, {9, 64}, &parsed.key_lines);
  REQUIRE(e);
  CHECK(e->line() == 3);
  CHECK(std::string(e->what()).find("fusion") != std::string::npos);

  CHECK(check_shapes(preset("frw"), {64, 32}, {9, 64}));
  CHECK_FALSE(check_shapes(mul_only, {9, 8}, {9, 8}));
  PipelineConfig query_aligned;
  query_aligned.alignment.query = AffinityKind::dot_product();
  CHECK(check_shapes(query_aligned, {64, 8}, {16, 8}));
}

TEST_CASE("check_shapes is sound") {
  Rng rng(23);
  int accepted = 0;
  for (int i = 0; i < 600; ++i) {
    const PipelineConfig c = test::random_config(rng);
    const std::size_t m = 1 + rng.index(9), n = 1 + rng.index(9);
    const std::size_t d = 1 + rng.index(4);
    const std::size_t d2 = rng.index(5) ? d : 1 + rng.index(4);
    const bool ok = !check_shapes(c, {m, d}, {n, d2});
    const PipelineParams params = PipelineParams::init(c, d, rng);
    ClassSupports supports;
    supports[0] = {test::random_tensor(rng, {n, d2}), test::random_tensor(rng, {n, d2})};
    INFO(print_config(c), " m=", m, " n=", n, " d=", d, " d'=", d2);
    if (ok) {
      ++accepted;
      ClassSpecificFeatures out;
      CHECK_NOTHROW(out = aaf_forward(c, params, test::random_tensor(rng, {m, d}), supports));
      if (!out.empty()) CHECK(out.at(0).shape() == Shape{m, output_channels(c, d)});
    }
  }
  CHECK(accepted > 200);
}
