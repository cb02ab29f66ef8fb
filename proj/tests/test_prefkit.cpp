// prefkit tests: the length-regularized DPO loss against closed-form
// values and finite differences, reward-gap filtering against a brute-force
// predicate, and weighted checkpoint merging against an f64 oracle.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "plc2/prefkit.hpp"
#include "support/testutil.hpp"

#include <cmath>
#include <vector>

using namespace plc2;

namespace {

PreferencePair random_pair(Rng& rng) {
    PreferencePair p;
    p.prompt_len = 1 + int(rng.next_below(30));
    p.chosen_len = 1 + int(rng.next_below(40));
    p.rejected_len = 1 + int(rng.next_below(40));
    p.policy_logp_chosen = -0.01 - 8.0 * rng.next_double();
    p.policy_logp_rejected = -0.01 - 8.0 * rng.next_double();
    p.ref_logp_chosen = -0.01 - 8.0 * rng.next_double();
    p.ref_logp_rejected = -0.01 - 8.0 * rng.next_double();
    p.reward_chosen = rng.next_double();
    p.reward_rejected = rng.next_double();
    return p;
}

}  // namespace

TEST_CASE("dpo loss is ln 2 when policy equals reference") {
    PreferencePair p;
    p.prompt_len = 4;
    p.chosen_len = 10;
    p.rejected_len = 12;
    p.policy_logp_chosen = p.ref_logp_chosen = -5.0;
    p.policy_logp_rejected = p.ref_logp_rejected = -7.5;
    DpoHyper hp;
    hp.beta = 0.25;
    DpoResult r = dpo_loss(p, hp);
    CHECK(std::abs(r.loss - std::log(2.0)) <= 1e-9);
    // at m = 0 the margin gradient is -beta/2 on the chosen side
    CHECK(std::abs(r.d_policy_chosen - (-hp.beta / 2)) <= 1e-12);
    CHECK(std::abs(r.d_policy_rejected - hp.beta / 2) <= 1e-12);

    PreferencePair bad = p;
    bad.chosen_len = 0;
    try {
        dpo_loss(bad, hp);
        FAIL("expected input error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::Input);
    }
    bad = p;
    bad.policy_logp_chosen = 0.5;
    try {
        dpo_loss(bad, hp);
        FAIL("expected input error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::Input);
    }
    DpoHyper badhp;
    badhp.beta = 0.0;
    try {
        dpo_loss(p, badhp);
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::Config);
    }
}

TEST_CASE("dpo gradients match central finite differences") {
    Rng rng(9);
    const double h = 1e-6;
    for (int trial = 0; trial < 100; trial++) {
        PreferencePair p = random_pair(rng);
        DpoHyper hp;  // moderate margins keep the FD quotient well conditioned
        hp.beta = 0.05 + 0.3 * rng.next_double();
        hp.alpha_len = 0.05 * rng.next_double();
        hp.gamma_sft = 0.5 * rng.next_double();
        DpoResult r = dpo_loss(p, hp);

        auto fd = [&](double PreferencePair::* field) {
            PreferencePair hi = p, lo = p;
            hi.*field += h;
            lo.*field -= h;
            return (dpo_loss(hi, hp).loss - dpo_loss(lo, hp).loss) / (2 * h);
        };
        auto rel = [](double a, double b) {
            return std::abs(a - b) / std::max({1e-9, std::abs(a), std::abs(b)});
        };
        CHECK(rel(fd(&PreferencePair::policy_logp_chosen), r.d_policy_chosen) <= 1e-6);
        CHECK(rel(fd(&PreferencePair::policy_logp_rejected), r.d_policy_rejected) <= 1e-6);
        CHECK(rel(fd(&PreferencePair::ref_logp_chosen), r.d_ref_chosen) <= 1e-6);
        CHECK(rel(fd(&PreferencePair::ref_logp_rejected), r.d_ref_rejected) <= 1e-6);

        // chosen pushed up, rejected pushed down, for any gamma_sft >= 0
        CHECK(r.d_policy_chosen < 0);
        CHECK(r.d_policy_rejected > 0);
        CHECK(r.loss > 0);
    }
}

TEST_CASE("length penalty raises the loss of longer chosen responses") {
    DpoHyper hp;
    hp.beta = 0.2;
    hp.alpha_len = 0.1;
    auto loss_at = [&](int chosen_len, int rejected_len) {
        PreferencePair p;
        p.prompt_len = 3;
        p.chosen_len = chosen_len;
        p.rejected_len = rejected_len;
        p.policy_logp_chosen = p.ref_logp_chosen = -4.0;  // equal log-ratios
        p.policy_logp_rejected = p.ref_logp_rejected = -6.0;
        return dpo_loss(p, hp).loss;
    };
    const std::vector<int> lens = {1, 5, 10, 20, 40};
    for (int ll : lens) {
        double prev = -1;
        for (int lw : lens) {
            double cur = loss_at(lw, ll);
            if (prev >= 0) CHECK(cur > prev);  // strictly increasing in chosen_len
            prev = cur;
        }
        CHECK(loss_at(2 * ll, ll) > loss_at(ll, ll));
    }

    // -log sigmoid is convex: nonnegative second differences along a margin
    // sweep, and the loss vanishes as the margin grows
    PreferencePair p;
    p.prompt_len = 3;
    p.chosen_len = 8;
    p.rejected_len = 8;
    p.ref_logp_chosen = -30.0;
    p.policy_logp_rejected = p.ref_logp_rejected = -6.0;
    DpoHyper plain;
    plain.beta = 1.0;
    std::vector<double> sweep;
    for (int i = 0; i <= 40; i++) {
        p.policy_logp_chosen = -30.0 + 0.5 * double(i);  // margin from -? to +?
        if (p.policy_logp_chosen > 0) break;
        sweep.push_back(dpo_loss(p, plain).loss);
    }
    for (size_t i = 2; i < sweep.size(); i++)
        CHECK(sweep[i] - 2 * sweep[i - 1] + sweep[i - 2] >= -1e-9);
    p.policy_logp_chosen = -1.0;  // ratio 29 -> margin 29: loss ~ e^-29
    CHECK(dpo_loss(p, plain).loss < 1e-6);
}

TEST_CASE("reward-gap filter keeps exactly the wide-gap pairs in order") {
    std::vector<PreferencePair> pairs(3);
    for (auto& p : pairs) {
        p.prompt_len = p.chosen_len = p.rejected_len = 1;
    }
    pairs[0].reward_chosen = 0.1;
    pairs[1].reward_chosen = 0.5;
    pairs[2].reward_chosen = 0.9;
    CHECK(filter_by_reward_gap(pairs, 0.0).size() == 3);
    std::vector<PreferencePair> kept = filter_by_reward_gap(pairs, 0.5);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].reward_chosen == 0.5);
    CHECK(kept[1].reward_chosen == 0.9);

    Rng rng(77);
    std::vector<PreferencePair> rnd;
    for (int i = 0; i < 200; i++) rnd.push_back(random_pair(rng));
    std::vector<PreferencePair> got = filter_by_reward_gap(rnd, 0.3);
    std::vector<PreferencePair> want;
    for (const auto& p : rnd)
        if (p.reward_chosen - p.reward_rejected >= 0.3) want.push_back(p);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); i++) {
        CHECK(got[i].reward_chosen == want[i].reward_chosen);
        CHECK(got[i].policy_logp_chosen == want[i].policy_logp_chosen);
    }

    try {
        filter_by_reward_gap(rnd, -0.1);
        FAIL("expected input error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::Input);
    }
}

TEST_CASE("merge_weighted matches the f64 elementwise oracle") {
    ModelConfig cfg = testutil::tiny_cfg("MA", 4, 8);
    std::vector<Checkpoint> cks;
    for (uint64_t s = 0; s < 3; s++) cks.push_back(params_to_checkpoint(init_params(cfg, s)));

    // lambda [1, 0] returns the first checkpoint bitwise
    Checkpoint one = merge_weighted({cks[0], cks[1]}, {1.0, 0.0});
    CHECK(testutil::same_checkpoint(one, cks[0]));

    // equal weights give the arithmetic mean
    Checkpoint half = merge_weighted({cks[0], cks[1]}, {0.5, 0.5});
    for (const auto& [name, e] : half.tensors) {
        Tensor a = cks[0].tensors.at(name).as_f32();
        Tensor b = cks[1].tensors.at(name).as_f32();
        Tensor m = e.as_f32();
        for (size_t i = 0; i < m.data.size(); i++)
            CHECK(std::abs(double(m.data[i]) - (double(a.data[i]) + double(b.data[i])) / 2) <=
                  1e-7);
    }

    // random simplex weights against an independent f64 accumulation
    Rng rng(8);
    double l0 = rng.next_double(), l1 = rng.next_double(), l2 = rng.next_double();
    double z = l0 + l1 + l2;
    std::vector<double> lam = {l0 / z, l1 / z, l2 / z};
    lam[2] = 1.0 - lam[0] - lam[1];
    Checkpoint mix = merge_weighted(cks, lam);
    for (const auto& [name, e] : mix.tensors) {
        Tensor t0 = cks[0].tensors.at(name).as_f32();
        Tensor t1 = cks[1].tensors.at(name).as_f32();
        Tensor t2 = cks[2].tensors.at(name).as_f32();
        Tensor m = e.as_f32();
        for (size_t i = 0; i < m.data.size(); i++) {
            double want = lam[0] * double(t0.data[i]) + lam[1] * double(t1.data[i]) +
                          lam[2] * double(t2.data[i]);
            CHECK(std::abs(double(m.data[i]) - want) <= 1e-6);
        }
    }

    // merging a checkpoint with itself is the identity for any weights
    Checkpoint self = merge_weighted({cks[0], cks[0]}, {0.3, 0.7});
    CHECK(testutil::same_checkpoint(self, cks[0]));
}

TEST_CASE("merge_weighted commutes with serialization and rejects mismatches") {
    ModelConfig cfg = testutil::tiny_cfg("A", 4, 8);
    Checkpoint a = params_to_checkpoint(init_params(cfg, 1));
    Checkpoint b = params_to_checkpoint(init_params(cfg, 2));

    testutil::TempDir dir;
    save_checkpoint(a, dir.file("a.ckpt"));
    save_checkpoint(b, dir.file("b.ckpt"));
    Checkpoint merged_then_saved = merge_weighted({a, b}, {0.25, 0.75});
    save_checkpoint(merged_then_saved, dir.file("m.ckpt"));
    Checkpoint saved_then_merged = merge_weighted(
        {load_checkpoint(dir.file("a.ckpt")), load_checkpoint(dir.file("b.ckpt"))}, {0.25, 0.75});
    CHECK(testutil::same_checkpoint(load_checkpoint(dir.file("m.ckpt")), saved_then_merged));

    auto expect = [&](std::vector<Checkpoint> cks, std::vector<double> lam, ErrKind want) {
        try {
            merge_weighted(cks, lam);
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(e.kind() == want);
        }
    };
    expect({}, {}, ErrKind::Input);
    expect({a, b}, {0.5}, ErrKind::Input);
    expect({a, b}, {0.5, 0.6}, ErrKind::Input);

    Checkpoint missing = b;
    missing.tensors.erase("blk.0.attn_q.weight");
    expect({a, missing}, {0.5, 0.5}, ErrKind::Schema);

    Checkpoint reshaped = b;
    reshaped.tensors["blk.0.attn_q.weight"].shape = {4, 16};
    expect({a, reshaped}, {0.5, 0.5}, ErrKind::Schema);

    Checkpoint wrongtype = b;
    wrongtype.tensors["blk.0.attn_q.weight"].dtype = Dtype::Fp8e4m3;
    expect({a, wrongtype}, {0.5, 0.5}, ErrKind::Schema);
}

TEST_CASE("preference pairs round-trip through the line-record file") {
    Rng rng(3);
    std::vector<PreferencePair> pairs;
    for (int i = 0; i < 5; i++) pairs.push_back(random_pair(rng));

    testutil::TempDir dir;
    save_pairs(pairs, dir.file("pairs.jsonl"));
    std::vector<PreferencePair> back = load_pairs(dir.file("pairs.jsonl"));
    REQUIRE(back.size() == pairs.size());
    for (size_t i = 0; i < pairs.size(); i++) {
        CHECK(back[i].prompt_len == pairs[i].prompt_len);
        CHECK(back[i].chosen_len == pairs[i].chosen_len);
        CHECK(back[i].rejected_len == pairs[i].rejected_len);
        CHECK(back[i].policy_logp_chosen == pairs[i].policy_logp_chosen);
        CHECK(back[i].policy_logp_rejected == pairs[i].policy_logp_rejected);
        CHECK(back[i].ref_logp_chosen == pairs[i].ref_logp_chosen);
        CHECK(back[i].ref_logp_rejected == pairs[i].ref_logp_rejected);
        CHECK(back[i].reward_chosen == pairs[i].reward_chosen);
        CHECK(back[i].reward_rejected == pairs[i].reward_rejected);
    }

    auto expect = [&](const std::string& content, ErrKind want) {
        std::string path = dir.file("bad.jsonl");
        atomic_write_file(path, content.data(), content.size());
        try {
            load_pairs(path);
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(e.kind() == want);
        }
    };
    expect("not json\n", ErrKind::Format);
    expect("{\"prompt_len\": 1}\n", ErrKind::Format);
    expect(
        "{\"prompt_len\":1,\"chosen_len\":0,\"rejected_len\":1,\"policy_logp_chosen\":-1,"
        "\"policy_logp_rejected\":-1,\"ref_logp_chosen\":-1,\"ref_logp_rejected\":-1,"
        "\"reward_chosen\":0,\"reward_rejected\":0}\n",
        ErrKind::Format);
    try {
        load_pairs(dir.file("nonexistent.jsonl"));
        FAIL("expected io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::Io);
    }
}
