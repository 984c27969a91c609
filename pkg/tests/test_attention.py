import math

import numpy as np
import pytest
import torch

from predetect.alignment import ALIGNED, BEVFeature, bilinear_sample
from predetect.attention import (
    TemporalDeformableAttention,
    aggregate_to_grid,
    attend_and_scatter,
    deform_attn,
    sinusoidal_embedding_2d,
)
from predetect.queries import QuerySet


def brute_force_attention(module: TemporalDeformableAttention, query: np.ndarray,
                          ref: np.ndarray, value_maps: np.ndarray) -> np.ndarray:
    """Loop-based oracle: explicit 4-neighbor bilinear weights, per-head /
    per-level / per-point accumulation in float64 numpy.

    value_maps: [T, X, Y, C] channel-last.
    """
    t_levels, nx, ny, c = value_maps.shape
    h, hd, p = module.n_heads, module.head_dim, module.n_points

    w_val = module.value_proj.weight.detach().double().numpy()
    b_val = module.value_proj.bias.detach().double().numpy()
    w_off = module.offset_proj.weight.detach().double().numpy()
    b_off = module.offset_proj.bias.detach().double().numpy()
    w_att = module.weight_proj.weight.detach().double().numpy()
    b_att = module.weight_proj.bias.detach().double().numpy()
    w_out = module.output_proj.weight.detach().double().numpy()
    b_out = module.output_proj.bias.detach().double().numpy()
    pos_emb = module.position_embedding.detach().double().numpy()  # [C, X, Y]
    tmp_emb = module.temporal_embedding.detach().double().numpy()  # [T, C]

    offsets = (w_off @ query + b_off).reshape(h, t_levels, p, 2)
    logits = (w_att @ query + b_att).reshape(h, t_levels, p)
    weights = np.empty_like(logits)
    if module.softmax_per_level:
        for hi in range(h):
            for ti in range(t_levels):
                e = np.exp(logits[hi, ti] - logits[hi, ti].max())
                weights[hi, ti] = e / e.sum()
    else:
        for hi in range(h):
            flat = logits[hi].reshape(-1)
            e = np.exp(flat - flat.max())
            weights[hi] = (e / e.sum()).reshape(t_levels, p)

    def sample(ti: int, hi: int, x: float, y: float) -> np.ndarray:
        xs, ys = x - 0.5, y - 0.5
        x0, y0 = math.floor(xs), math.floor(ys)
        fx, fy = xs - x0, ys - y0
        acc = np.zeros(hd)
        for (ix, iy, w) in [
            (x0, y0, (1 - fx) * (1 - fy)),
            (x0, y0 + 1, (1 - fx) * fy),
            (x0 + 1, y0, fx * (1 - fy)),
            (x0 + 1, y0 + 1, fx * fy),
        ]:
            if 0 <= ix < nx and 0 <= iy < ny:
                cell = value_maps[ti, ix, iy] + pos_emb[:, ix, iy] + tmp_emb[ti]
                projected = w_val @ cell + b_val
                acc += w * projected[hi * hd : (hi + 1) * hd]
        return acc

    heads_out = []
    for hi in range(h):
        out_h = np.zeros(hd)
        for ti in range(t_levels):
            for pi in range(p):
                x, y = ref + offsets[hi, ti, pi]
                out_h += weights[hi, ti, pi] * sample(ti, hi, x, y)
        heads_out.append(out_h)
    return w_out @ np.concatenate(heads_out) + b_out


def randomize(module: TemporalDeformableAttention, rng) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.from_numpy(rng.normal(0, 0.5, p.shape)).to(p.dtype))


def make_module(c=8, cq=6, t=3, cells=8, heads=2, points=2, **kw) -> TemporalDeformableAttention:
    return TemporalDeformableAttention(
        feature_channels=c, query_channels=cq, n_levels=t, cells_x=cells, cells_y=cells,
        n_heads=heads, n_points=points, **kw
    )


def zero_embeddings(module: TemporalDeformableAttention) -> None:
    with torch.no_grad():
        module.position_embedding.zero_()
        module.temporal_embedding.zero_()


class TestDeformAttn:
    def test_degenerate_reduces_to_bilinear_sample(self, rng):
        # 1 head / 1 level / 1 point, zero offsets, identity projections,
        # zero embeddings: the output is the bilinear sample at the
        # reference point.
        module = make_module(c=4, cq=4, t=1, heads=1, points=1)
        zero_embeddings(module)
        with torch.no_grad():
            module.value_proj.weight.copy_(torch.eye(4))
            module.value_proj.bias.zero_()
            module.output_proj.weight.copy_(torch.eye(4))
            module.output_proj.bias.zero_()
            module.offset_proj.weight.zero_()
            module.offset_proj.bias.zero_()
        maps = torch.from_numpy(rng.normal(size=(1, 8, 8, 4)).astype(np.float32))
        query = torch.randn(4)
        ref = (3.7, 5.2)
        out = deform_attn(query, ref, maps, module)
        expected = bilinear_sample(
            maps[0].permute(2, 0, 1), torch.tensor([[3.7, 5.2]])
        )[:, 0]
        torch.testing.assert_close(out, expected, atol=1e-6, rtol=0)

    def test_equal_logits_give_unweighted_mean(self, rng):
        # 2 levels x 2 points with equal logits: softmax is uniform, so the
        # output is the plain mean of the 4 samples.
        module = make_module(c=4, cq=4, t=2, heads=1, points=2)
        zero_embeddings(module)
        offsets = torch.tensor([0.3, -0.8, -1.2, 0.5, 0.9, 1.1, -0.4, -0.6])
        with torch.no_grad():
            module.value_proj.weight.copy_(torch.eye(4))
            module.value_proj.bias.zero_()
            module.output_proj.weight.copy_(torch.eye(4))
            module.output_proj.bias.zero_()
            module.offset_proj.weight.zero_()
            module.offset_proj.bias.copy_(offsets)
            module.weight_proj.weight.zero_()
            module.weight_proj.bias.fill_(0.73)
        maps = torch.from_numpy(rng.normal(size=(2, 8, 8, 4)).astype(np.float32))
        ref = torch.tensor([4.1, 3.6])
        out = deform_attn(torch.randn(4), tuple(ref.tolist()), maps, module)
        locs = ref.reshape(1, 1, 2) + offsets.reshape(2, 2, 2)
        samples = []
        for t in range(2):
            s = bilinear_sample(maps[t].permute(2, 0, 1), locs[t])
            samples.append(s)
        expected = torch.cat(samples, dim=1).mean(dim=1)
        torch.testing.assert_close(out, expected, atol=1e-6, rtol=0)

    def test_matches_brute_force_oracle(self, rng):
        for trial in range(25):
            t = int(rng.integers(1, 4))
            heads = int(rng.integers(1, 3)) * 2
            c = heads * int(rng.integers(1, 3)) * 2
            c = max(c, 4) if c % 4 == 0 else heads * 4
            cells = int(rng.integers(6, 12))
            module = make_module(c=c, cq=5, t=t, cells=cells, heads=heads,
                                 points=int(rng.integers(1, 4)))
            randomize(module, rng)
            maps = rng.normal(size=(t, cells, cells, c))
            query = rng.normal(size=5)
            ref = rng.uniform(0, cells, size=2)
            out = deform_attn(
                torch.from_numpy(query).float(),
                tuple(ref),
                torch.from_numpy(maps).float(),
                module,
            )
            expected = brute_force_attention(module, query, ref, maps)
            np.testing.assert_allclose(out.detach().numpy(), expected, atol=1e-5)

    def test_oracle_in_double_precision(self, rng):
        module = make_module(c=8, cq=6, t=2, heads=2, points=3).double()
        randomize(module, rng)
        maps = rng.normal(size=(2, 8, 8, 8))
        query = rng.normal(size=6)
        ref = rng.uniform(1, 7, size=2)
        out = deform_attn(torch.from_numpy(query), tuple(ref), torch.from_numpy(maps), module)
        expected = brute_force_attention(module, query, ref, maps)
        np.testing.assert_allclose(out.detach().numpy(), expected, atol=1e-10)

    def test_per_level_softmax_oracle(self, rng):
        module = make_module(c=8, cq=6, t=3, heads=2, points=2, softmax_per_level=True)
        randomize(module, rng)
        maps = rng.normal(size=(3, 8, 8, 8))
        query = rng.normal(size=6)
        ref = np.array([4.0, 4.0])
        out = deform_attn(torch.from_numpy(query).float(), tuple(ref),
                          torch.from_numpy(maps).float(), module)
        expected = brute_force_attention(module, query, ref, maps)
        np.testing.assert_allclose(out.detach().numpy(), expected, atol=1e-5)

    def test_softmax_normalization(self, rng):
        module = make_module(t=3)
        randomize(module, rng)
        queries = torch.randn(5, 6)
        weights = module.attention_weights(queries)
        sums = weights.reshape(5, module.n_heads, -1).sum(dim=2)
        torch.testing.assert_close(sums, torch.ones_like(sums), atol=1e-6, rtol=0)

    def test_out_of_bounds_samples_are_zero(self, rng):
        module = make_module(c=4, cq=4, t=1, heads=1, points=1)
        zero_embeddings(module)
        with torch.no_grad():
            module.value_proj.weight.copy_(torch.eye(4))
            module.value_proj.bias.zero_()
            module.output_proj.weight.copy_(torch.eye(4))
            module.output_proj.bias.zero_()
            module.offset_proj.weight.zero_()
            module.offset_proj.bias.copy_(torch.tensor([100.0, 100.0]))
        maps = torch.from_numpy(rng.normal(size=(1, 8, 8, 4)).astype(np.float32))
        out = deform_attn(torch.randn(4), (4.0, 4.0), maps, module)
        assert not out.detach().any()

    def test_gradients_match_finite_differences(self, rng):
        module = make_module(c=4, cq=4, t=2, cells=6, heads=2, points=2).double()
        randomize(module, rng)
        maps = torch.from_numpy(rng.normal(size=(1, 2, 4, 6, 6))).requires_grad_(True)
        query = torch.from_numpy(rng.normal(size=(1, 1, 4))).requires_grad_(True)
        ref = torch.tensor([[[3.3, 2.7]]], dtype=torch.float64)
        weights = torch.from_numpy(rng.normal(size=(1, 1, 4)))

        def f(m, q):
            return (module(q, ref, m) * weights).sum()

        loss = f(maps, query)
        g_maps, g_query = torch.autograd.grad(loss, (maps, query))
        eps = 1e-6
        for tensor, grad in ((maps, g_maps), (query, g_query)):
            flat = tensor.detach().reshape(-1)
            idxs = rng.choice(flat.numel(), size=min(10, flat.numel()), replace=False)
            for i in idxs:
                orig = float(flat[i])
                with torch.no_grad():
                    flat[i] = orig + eps
                    up = float(f(maps.detach(), query.detach()))
                    flat[i] = orig - eps
                    down = float(f(maps.detach(), query.detach()))
                    flat[i] = orig
                fd = (up - down) / (2 * eps)
                an = float(grad.reshape(-1)[i])
                assert an == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestAggregate:
    def test_support_is_exactly_query_positions(self, rng):
        module = make_module(c=8, cq=8, t=2)
        randomize(module, rng)
        features = [
            BEVFeature(torch.from_numpy(rng.normal(size=(8, 8, 8)).astype(np.float32)), t, ALIGNED)
            for t in (1, 2)
        ]
        positions = torch.tensor([[0, 0], [3, 5], [7, 7], [2, 2]])
        queries = QuerySet(positions=positions, embeddings=torch.randn(4, 8))
        out = attend_and_scatter(queries, features, module)
        assert out.shape == (8, 8, 8)
        nonzero = (out.detach().abs().sum(dim=2) > 0).nonzero().tolist()
        assert sorted(map(tuple, nonzero)) == sorted(map(tuple, positions.tolist()))

    def test_zero_value_maps_zero_output(self, rng):
        module = make_module(c=8, cq=8, t=2)
        randomize(module, rng)
        zero_embeddings(module)
        with torch.no_grad():
            module.value_proj.bias.zero_()
            module.output_proj.bias.zero_()
        features = [BEVFeature(torch.zeros(8, 8, 8), t, ALIGNED) for t in (1, 2)]
        queries = QuerySet(positions=torch.tensor([[1, 1], [4, 6]]),
                           embeddings=torch.randn(2, 8))
        out = attend_and_scatter(queries, features, module)
        assert not out.detach().any()

    def test_output_shape_for_any_k(self, rng):
        module = make_module(c=8, cq=8, t=2)
        features = [
            BEVFeature(torch.from_numpy(rng.normal(size=(8, 8, 8)).astype(np.float32)), t, ALIGNED)
            for t in (1, 2)
        ]
        for k in (1, 5, 16):
            pos = torch.stack([torch.arange(k) % 8, torch.arange(k) // 8 % 8], dim=1)
            queries = QuerySet(positions=pos, embeddings=torch.randn(k, 8))
            out = attend_and_scatter(queries, features, module)
            assert out.shape == (8, 8, 8)

    def test_temporal_permutation_changes_output(self, rng):
        # With distinct temporal embeddings, level order matters.
        module = make_module(c=8, cq=8, t=3)
        randomize(module, rng)
        maps = torch.from_numpy(rng.normal(size=(1, 3, 8, 8, 8)).astype(np.float32))
        queries = torch.randn(1, 4, 8)
        ref = torch.tensor([[4.0, 4.0], [2.5, 3.0], [6.1, 1.2], [3.3, 7.4]]).unsqueeze(0)
        base = module(queries, ref, maps)
        permuted = module(queries, ref, maps[:, [2, 0, 1]])
        assert not torch.allclose(base, permuted)

    def test_requires_aligned_features(self, rng):
        from predetect.alignment import RAW_EGO

        module = make_module(c=8, cq=8, t=2)
        features = [
            BEVFeature(torch.zeros(8, 8, 8), 1, ALIGNED),
            BEVFeature(torch.zeros(8, 8, 8), 2, RAW_EGO),
        ]
        queries = QuerySet(positions=torch.tensor([[1, 1]]), embeddings=torch.randn(1, 8))
        with pytest.raises(ValueError):
            attend_and_scatter(queries, features, module)


class TestSinusoidalEmbedding:
    def test_shape_and_determinism(self):
        emb = sinusoidal_embedding_2d(8, 10, 16)
        assert emb.shape == (16, 8, 10)
        assert torch.equal(emb, sinusoidal_embedding_2d(8, 10, 16))

    def test_distinct_positions_distinct_embeddings(self):
        emb = sinusoidal_embedding_2d(8, 8, 16)
        flat = emb.reshape(16, -1).T
        assert torch.unique(flat, dim=0).shape[0] == 64

    def test_rejects_odd_channels(self):
        with pytest.raises(ValueError):
            sinusoidal_embedding_2d(8, 8, 10)
