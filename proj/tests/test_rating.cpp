#include <doctest.h>

#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "pbtseg/rating.hpp"
#include "pbtseg/render.hpp"
#include "pbtseg/stats.hpp"
#include "support.hpp"

using namespace pbtseg;
using namespace testing;

namespace {

std::vector<std::string> case_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("CASE_" + std::to_string(100 + i));
  return ids;
}

RatingStore::Clock fixed_clock() {
  auto counter = std::make_shared<int>(0);
  return [counter] { return "2024-01-01T00:00:" + std::to_string(10 + (*counter)++ % 50) + ".000Z"; };
}

}  // namespace

TEST_SUITE("rating") {
  TEST_CASE("rubric text") {
    CHECK(kStarRubric[0] == "The segmentation is completely incorrect/not in the right location.");
    CHECK(kStarRubric[3] == "The segmentation is clinically usable and perfect.");
  }

  TEST_CASE("orders are seeded permutations") {
    const auto ids = case_ids(53);
    const auto a = blinded_order(ids, 42), b = blinded_order(ids, 42), c = blinded_order(ids, 43);
    CHECK(a == b);
    CHECK(a != c);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == ids);
    // input order does not matter
    auto shuffled = ids;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(blinded_order(shuffled, 42) == a);
  }

  TEST_CASE("random seeds always give permutations") {
    Xorshift64 rng(17);
    for (int i = 0; i < 200; ++i) {
      const auto ids = case_ids(1 + rng.below(40));
      auto order = blinded_order(ids, rng.next());
      std::sort(order.begin(), order.end());
      CHECK(order == ids);
    }
  }

  TEST_CASE("sessions hide case ids behind opaque keys") {
    RatingStore store(case_ids(5));
    const auto s1 = store.create_session("alice", 42);
    const auto s2 = store.create_session("alice", 42);
    CHECK(s1.keys == s2.keys);
    CHECK(s1.session_id != s2.session_id);
    CHECK(std::set<std::string>(s1.keys.begin(), s1.keys.end()).size() == 5);
    for (const auto& k : s1.keys) {
      CHECK(k.size() == 16);
      CHECK(k.find("CASE") == std::string::npos);
    }
    const auto order = blinded_order(case_ids(5), 42);
    for (std::size_t i = 0; i < 5; ++i) CHECK(store.case_for_key(s1.keys[i]) == order[i]);
    RatingStore empty(std::vector<std::string>{});
    CHECK_THROWS_AS(empty.create_session("alice", 1), RatingError);
  }

  TEST_CASE("submission validation") {
    RatingStore store(case_ids(3), std::nullopt, 1, fixed_clock());
    const auto s = store.create_session("alice", 7);
    auto kind_of = [&](auto fn) {
      try {
        fn();
      } catch (const RatingError& e) {
        return static_cast<int>(e.kind());
      }
      return -1;
    };
    using K = RatingError::Kind;
    CHECK(kind_of([&] { store.submit(s.session_id, "alice", s.keys[0], Channel::ET, 5); }) == int(K::BadRequest));
    CHECK(kind_of([&] { store.submit(s.session_id, "alice", s.keys[0], Channel::ET, 0); }) == int(K::BadRequest));
    CHECK(kind_of([&] { store.submit(s.session_id, "bob", s.keys[0], Channel::ET, 3); }) == int(K::Forbidden));
    CHECK(kind_of([&] { store.submit(s.session_id, "alice", "0000", Channel::ET, 3); }) == int(K::NotFound));
    CHECK(kind_of([&] { store.submit("S9999", "alice", s.keys[0], Channel::ET, 3); }) == int(K::NotFound));
    CHECK(store.log().empty());
    const auto r = store.submit(s.session_id, "alice", s.keys[0], Channel::ET, 3);
    CHECK(r.timestamp == "2024-01-01T00:00:10.000Z");
  }

  TEST_CASE("resubmission supersedes in summaries but stays in the log") {
    RatingStore store(case_ids(3));
    const auto s = store.create_session("alice", 7);
    store.submit(s.session_id, "alice", s.keys[0], Channel::T2H, 2);
    store.submit(s.session_id, "alice", s.keys[0], Channel::T2H, 4);
    CHECK(store.log().size() == 2);
    const auto rows = store.summary(false);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n == 1);
    CHECK(*rows[0].mean == 4.0);
    CHECK_FALSE(rows[0].sd.has_value());
    CHECK(rows[0].histogram == std::array<std::size_t, 4>{0, 0, 0, 1});
  }

  TEST_CASE("summaries: 4,3,4,3 and independent raters") {
    RatingStore store(case_ids(4));
    const auto a = store.create_session("alice", 1);
    const int stars[] = {4, 3, 4, 3};
    for (std::size_t i = 0; i < 4; ++i) store.submit(a.session_id, "alice", a.keys[i], Channel::CC, stars[i]);
    const auto before = store.summary(false);
    REQUIRE(before.size() == 1);
    CHECK(*before[0].mean == 3.5);
    CHECK(*before[0].sd == doctest::Approx(0.5773502691896258).epsilon(1e-12));

    const auto b = store.create_session("bob", 2);
    store.submit(b.session_id, "bob", b.keys[0], Channel::CC, 1);
    const auto after = store.summary(false);
    REQUIRE(after.size() == 2);
    CHECK(after[0].rater_id == "alice");
    CHECK(*after[0].mean == *before[0].mean);
    CHECK(*after[0].sd == *before[0].sd);
    CHECK(after[0].histogram == before[0].histogram);
  }

  TEST_CASE("finalized-only summaries and unblinding") {
    RatingStore store(case_ids(3));
    const auto a = store.create_session("alice", 1);
    const auto b = store.create_session("bob", 1);
    store.submit(a.session_id, "alice", a.keys[0], Channel::T2H, 4);
    store.submit(b.session_id, "bob", b.keys[0], Channel::T2H, 2);
    CHECK(store.summary(true).empty());
    CHECK(store.unblinded().empty());
    CHECK_THROWS_AS(store.finalize(a.session_id, "bob"), RatingError);
    store.finalize(a.session_id, "alice");
    const auto rows = store.summary(true);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].rater_id == "alice");
    const auto un = store.unblinded();
    REQUIRE(un.size() == 1);
    CHECK(un[0].case_id == blinded_order(case_ids(3), 1)[0]);
  }

  TEST_CASE("next key walks the session until every channel is rated") {
    RatingStore store(case_ids(2));
    const auto s = store.create_session("alice", 3);
    CHECK(*store.next_key(s.session_id) == s.keys[0]);
    for (auto ch : kAllChannels) store.submit(s.session_id, "alice", s.keys[0], ch, 3);
    CHECK(*store.next_key(s.session_id) == s.keys[1]);
    for (auto ch : kAllChannels) store.submit(s.session_id, "alice", s.keys[1], ch, 3);
    CHECK_FALSE(store.next_key(s.session_id).has_value());
  }

  TEST_CASE("log replay and brute-force recomputation agree") {
    ScratchDir dir("rating");
    const auto log = dir.path / "ratings.ndjson";
    const auto ids = case_ids(12);
    Xorshift64 rng(4242);
    std::vector<RatingRecord> mine;
    {
      RatingStore store(ids, log);
      std::vector<BlindedSession> sessions;
      for (const char* rater : {"r1", "r2", "r3"}) sessions.push_back(store.create_session(rater, rng.next()));
      for (int i = 0; i < 400; ++i) {
        const auto& s = sessions[rng.below(sessions.size())];
        const auto& key = s.keys[rng.below(s.keys.size())];
        const auto ch = kAllChannels[rng.below(3)];
        mine.push_back(store.submit(s.session_id, s.rater_id, key, ch, static_cast<int>(1 + rng.below(4))));
      }
      store.finalize(sessions[1].session_id, "r2");
    }

    // brute force: last record per (rater, key, channel) by scanning backwards
    std::map<std::pair<std::string, Channel>, std::vector<double>> expect;
    std::set<std::tuple<std::string, std::string, Channel>> seen;
    for (auto it = mine.rbegin(); it != mine.rend(); ++it) {
      if (!seen.insert({it->rater_id, it->blinded_case_key, it->channel}).second) continue;
      expect[{it->rater_id, it->channel}].push_back(it->stars);
    }

    RatingStore replayed(ids, log);
    CHECK(replayed.log() == mine);
    CHECK(replayed.sessions().size() == 3);
    const auto rows = replayed.summary(false);
    CHECK(rows.size() == expect.size());
    for (const auto& row : rows) {
      const auto& values = expect.at({row.rater_id, row.channel});
      const auto s = summarize(values);
      CHECK(row.n == values.size());
      CHECK(std::abs(*row.mean - *s.mean) < 1e-12);
      CHECK(std::abs(*row.sd - *s.sd) < 1e-12);
      std::array<std::size_t, 4> hist{};
      for (double v : values) ++hist[static_cast<std::size_t>(v) - 1];
      CHECK(row.histogram == hist);
    }
    const auto fin = replayed.summary(true);
    for (const auto& row : fin) CHECK(row.rater_id == "r2");

    // the replayed store keeps appending to the same log
    const auto s4 = replayed.create_session("r4", 1);
    CHECK(s4.session_id == "S0004");
    RatingStore again(ids, log);
    CHECK(again.sessions().size() == 4);

    // a log from a different cohort is refused
    CHECK_THROWS(RatingStore(case_ids(11), log));
  }
}

TEST_SUITE("render") {
  namespace {
  IntensityVolume ramp(const VolumeGeometry& g) {
    std::vector<float> v(g.voxel_count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
    return IntensityVolume(g, v, Sequence::T2);
  }
  }  // namespace

  TEST_CASE("percentile window") {
    const auto g = VolumeGeometry::isotropic({10, 10, 10});
    const auto w = display_window(ramp(g));
    CHECK(w.lo == 4.0);
    CHECK(w.hi == 995.0);
  }

  TEST_CASE("grayscale without overlays, flipped vertical axis") {
    const auto g = VolumeGeometry::isotropic({4, 3, 2});
    const auto img = ramp(g);
    const LabelVolume labels(g);
    const auto s = render_slice(img, {0, 23}, labels, SliceAxis::Axial, 1, {});
    CHECK(s.channels == 1);
    CHECK(s.width == 4);
    CHECK(s.height == 3);
    // top-left pixel is x=0, y=2, z=1 -> value 20
    CHECK(s.pixels[0] == static_cast<std::uint8_t>(std::lround(255.0 * 20 / 23)));
    const auto sag = render_slice(img, {0, 23}, labels, SliceAxis::Sagittal, 3, {});
    CHECK(sag.width == 3);
    CHECK(sag.height == 2);
    CHECK_THROWS_AS(render_slice(img, {0, 23}, labels, SliceAxis::Axial, 2, {}), std::out_of_range);
  }

  TEST_CASE("background labels leave overlays invisible") {
    const auto g = VolumeGeometry::isotropic({6, 6, 6});
    const auto img = ramp(g);
    const auto w = display_window(img);
    const std::vector<Channel> all{kAllChannels.begin(), kAllChannels.end()};
    const auto gray = render_slice(img, w, LabelVolume(g), SliceAxis::Coronal, 2, {});
    const auto rgb = render_slice(img, w, LabelVolume(g), SliceAxis::Coronal, 2, all);
    REQUIRE(rgb.channels == 3);
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
      CHECK(rgb.pixels[3 * i] == gray.pixels[i]);
      CHECK(rgb.pixels[3 * i + 1] == gray.pixels[i]);
      CHECK(rgb.pixels[3 * i + 2] == gray.pixels[i]);
    }
  }

  TEST_CASE("overlay blends only the requested channels") {
    const auto g = VolumeGeometry::isotropic({2, 1, 1});
    const IntensityVolume img(g, {0.f, 0.f}, Sequence::T1);
    const LabelVolume labels(g, {2, 3});
    const std::vector<Channel> et{Channel::ET};
    const auto s = render_slice(img, {0, 1}, labels, SliceAxis::Axial, 0, et);
    const auto red = overlay_colour(Channel::ET);
    CHECK(s.pixels[0] == (red.r + 1) / 2);
    CHECK(s.pixels[1] == (red.g + 1) / 2);
    CHECK(s.pixels[3] == 0);  // CC not requested
  }

  TEST_CASE("PNG round trip and deterministic bytes") {
    const auto g = VolumeGeometry::isotropic({9, 7, 5});
    Xorshift64 rng(6);
    const auto labels = random_labels(rng, g.shape(), 0.3);
    const auto img = ramp(g);
    const std::vector<Channel> all{kAllChannels.begin(), kAllChannels.end()};
    const auto a = render_slice(img, display_window(img), labels, SliceAxis::Axial, 2, all);
    const auto pa = encode_png(a), pb = encode_png(render_slice(img, display_window(img), labels, SliceAxis::Axial, 2, all));
    CHECK(pa == pb);
    CHECK(decode_png(pa) == a);
    const auto gray = render_slice(img, display_window(img), labels, SliceAxis::Axial, 2, {});
    CHECK(decode_png(encode_png(gray)) == gray);
    CHECK_THROWS(decode_png(std::vector<std::uint8_t>{1, 2, 3}));
  }
}
