#include "catch_amalgamated.hpp"

#include <cmath>
#include <numbers>

#include "support/model_oracle.hpp"
#include "support/oracles.hpp"
#include "vaemech/data/dataset.hpp"
#include "vaemech/model/discriminator.hpp"
#include "vaemech/model/loss.hpp"
#include "vaemech/model/train.hpp"
#include "vaemech/model/vae.hpp"

using namespace vaemech;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig small_config(Variant v = Variant::standard) {
    ModelConfig c;
    c.variant = v;
    c.image_size = 16;
    c.latent_dim = 3;
    c.conv_channels = {4, 8};
    c.batch_size = 8;
    c.disc_hidden = 8;
    c.disc_layers = 2;
    return c;
}

}  // namespace

TEST_CASE("zero network encodes to the prior and decodes to 0.5", "[vae]") {
    const ModelBundle m = make_zero_model(small_config());
    Rng rng(1);
    const Tensor x = oracle::random_tensor({2, 1, 16, 16}, rng, 0, 1);
    const EncodeResult e = encode(m, x);
    for (double v : e.mu.data()) CHECK(v == 0.0);
    for (double v : e.logvar.data()) CHECK(v == 0.0);
    const DecodeResult d = decode(m, e.mu);
    CHECK(d.recon.shape() == x.shape());
    for (double v : d.recon.data()) CHECK(v == 0.5);
}

TEST_CASE("encode is deterministic and matches the loop forward", "[vae][oracle]") {
    ModelConfig cfg = small_config();
    cfg.seed = 4;
    const ModelBundle m = make_model(cfg);
    Rng rng(2);
    const Tensor x = oracle::random_tensor({3, 1, 16, 16}, rng, 0, 1);
    const EncodeResult a = encode(m, x), b = encode(m, x);
    CHECK(a.mu.storage() == b.mu.storage());
    const auto o = oracle::forward_sites(m, x);
    const SiteLayout lay = m.layout();
    CHECK(oracle::max_abs_diff(a.mu, o[lay.mu()]) < 1e-12);
    CHECK(oracle::max_abs_diff(a.logvar, o[lay.logvar()]) < 1e-12);
    CHECK(oracle::max_abs_diff(decode(m, a.mu).recon, o[lay.recon()]) < 1e-12);
}

TEST_CASE("ten named sites with the documented shapes", "[vae]") {
    ModelConfig cfg = small_config();
    cfg.conv_channels = {4, 8, 8};
    const ModelBundle m = make_model(cfg);
    const auto names = m.site_names();
    CHECK(names == std::vector<std::string>{"encoder_conv_0", "encoder_conv_1", "encoder_conv_2", "mu", "logvar", "z",
                                            "decoder_conv_0", "decoder_conv_1", "decoder_conv_2", "recon"});
    CHECK(m.site_shape(0, 2) == Shape{2, 4, 8, 8});
    CHECK(m.site_shape(m.layout().mu(), 2) == Shape{2, 3});
    CHECK(m.site_shape(m.layout().recon(), 2) == Shape{2, 1, 16, 16});
    CHECK_THROWS(m.layout().index("nope"));
}

TEST_CASE("reparameterize closed forms", "[vae]") {
    const Tensor mu = Tensor({1, 2}, {0.5, -1.0});
    CHECK(reparameterize(mu, Tensor({1, 2}, {0.3, 0.7}), Tensor({1, 2})).storage() == mu.storage());
    const Tensor z = reparameterize(mu, Tensor({1, 2}), Tensor({1, 2}, {1.0, 2.0}));
    CHECK(z.storage() == std::vector<double>{1.5, 1.0});
    const Tensor two = reparameterize(Tensor({1, 1}), Tensor({1, 1}, std::log(4.0)), Tensor({1, 1}, 1.0));
    CHECK_THAT(two[0], WithinAbs(2.0, 1e-15));
}

TEST_CASE("loss closed forms", "[loss]") {
    const ModelConfig cfg = small_config();
    const Tensor x({1, 1, 64, 64}, 0.5);
    const LossComponents base = loss_components(cfg, x, x, Tensor({1, 3}), Tensor({1, 3}));
    CHECK(base.kl == 0.0);
    CHECK_THAT(base.recon, WithinRel(4096.0 * std::numbers::ln2, 1e-12));
    const LossComponents one = loss_components(cfg, x, x, Tensor({1, 3}, {1.0, 0.0, 0.0}), Tensor({1, 3}));
    CHECK_THAT(one.kl, WithinAbs(0.5, 1e-15));
}

TEST_CASE("beta scales only the KL term", "[loss]") {
    ModelConfig s = small_config(), b = small_config(Variant::beta);
    b.beta = 4.0;
    const Tensor x({1, 1, 4, 4}, 0.3), r({1, 1, 4, 4}, 0.6);
    const Tensor mu({1, 3}, {0.2, -0.1, 0.5}), lv({1, 3}, {0.1, 0.2, -0.3});
    const LossComponents cs = loss_components(s, x, r, mu, lv), cb = loss_components(b, x, r, mu, lv);
    CHECK_THAT(cb.total - cs.total, WithinRel(3.0 * cs.kl, 1e-12));
}

TEST_CASE("zero discriminator estimates zero total correlation", "[factorvae]") {
    Discriminator d = make_discriminator(small_config(Variant::factor));
    for (Parameter* p : d.parameters()) p->value = Tensor(p->value.shape());
    Rng rng(3);
    const TcEstimate t = factorvae_tc(oracle::random_tensor({6, 3}, rng), d, rng);
    CHECK(t.tc == 0.0);
    CHECK_THAT(t.disc_loss, WithinAbs(std::numbers::ln2, 1e-12));
    CHECK_THROWS(factorvae_tc(Tensor({1, 3}), d, rng));
}

TEST_CASE("dimension permutation shuffles each column separately", "[factorvae]") {
    Rng rng(5);
    Tensor z({50, 2});
    for (std::size_t i = 0; i < 50; ++i) {
        z[2 * i] = static_cast<double>(i);
        z[2 * i + 1] = 100.0 + static_cast<double>(i);
    }
    const Tensor p = permute_dims(z, rng);
    std::vector<double> c0, c1;
    std::size_t same_row = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        c0.push_back(p[2 * i]);
        c1.push_back(p[2 * i + 1]);
        same_row += (p[2 * i + 1] - p[2 * i] == 100.0);
    }
    std::sort(c0.begin(), c0.end());
    std::sort(c1.begin(), c1.end());
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(c0[i] == static_cast<double>(i));
        CHECK(c1[i] == 100.0 + static_cast<double>(i));
    }
    CHECK(same_row < 10);
}

TEST_CASE("one epoch on identical images beats the constant 0.5 baseline", "[train]") {
    ModelConfig cfg = small_config();
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.lr = 1e-2;
    ScmParams scm;
    const DatasetHandle one = generate_synthetic(scm, 1, 7, 16);
    Tensor images({64, 1, 16, 16});
    for (std::size_t i = 0; i < 64; ++i) std::copy(one.images.data().begin(), one.images.data().end(), images.data().begin() + i * 256);
    const TrainResult r = train(images, cfg);
    const double baseline = 256.0 * std::numbers::ln2;
    const EncodeResult e = encode(r.model, one.images);
    const LossComponents c = loss_components(cfg, one.images, decode(r.model, e.mu).recon, e.mu, e.logvar);
    CHECK(c.recon < baseline);
    CHECK(r.log.epochs.size() == 1);
    CHECK(r.log.steps == 16);
}

TEST_CASE("training is deterministic under a seed", "[train]") {
    for (Variant v : {Variant::standard, Variant::factor}) {
        ModelConfig cfg = small_config(v);
        cfg.epochs = 2;
        cfg.seed = 21;
        const DatasetHandle d = generate_synthetic(ScmParams{}, 24, 3, 16);
        const TrainResult a = train(d.images, cfg), b = train(d.images, cfg);
        const auto pa = a.model.parameters(), pb = b.model.parameters();
        for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k]->value.storage() == pb[k]->value.storage());
        cfg.seed = 22;
        const TrainResult c = train(d.images, cfg);
        CHECK(c.model.parameters()[0]->value.storage() != pa[0]->value.storage());
    }
}

TEST_CASE("config validation rejects bad architectures", "[config]") {
    ModelConfig c = small_config();
    c.image_size = 10;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small_config(Variant::factor);
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small_config();
    c.gamma = -1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    CHECK_THROWS_AS(parse_variant("vq"), ValidationError);
}
