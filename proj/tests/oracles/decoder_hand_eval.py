"""Independent evaluation of the hLSTMat and DA decoders at tiny sizes.

Parameters, features and tokens follow closed-form fill rules shared with
tests/unit/test_decoders.cpp and test_da_decoder.cpp. Everything is
evaluated with mpmath at 40 digits; the printed probabilities are frozen
into the C++ tests.
"""
from mpmath import mp, mpf, sin, cos, exp, tanh

mp.dps = 40


def fill(name, shape):
    s = sum(name.encode())
    n = 1
    for d in shape:
        n *= d
    vals = [mpf('0.5') * sin(mpf('0.7') * j + mpf('0.13') * s) for j in range(n)]
    if len(shape) == 1:
        return vals
    rows, cols = shape
    return [vals[r * cols:(r + 1) * cols] for r in range(rows)]


def frames(rows, cols):
    return [[cos(mpf('0.9') * r + mpf('0.4') * c + mpf('0.3')) for c in range(cols)] for r in range(rows)]


def mv(W, x):
    return [sum(w * v for w, v in zip(row, x)) for row in W]


def vadd(*xs):
    return [sum(t) for t in zip(*xs)]


def sig(x):
    return [1 / (1 + exp(-v)) for v in x]


def vtanh(x):
    return [tanh(v) for v in x]


def vmul(a, b):
    return [p * q for p, q in zip(a, b)]


def softmax(x):
    m = max(x)
    e = [exp(v - m) for v in x]
    z = sum(e)
    return [v / z for v in e]


class Params:
    def __init__(self, shapes):
        self.p = {name: fill(name, shape) for name, shape in shapes}

    def __getitem__(self, k):
        return self.p[k]


def lstm(P, pre, y, h, m):
    g = lambda k: vadd(mv(P[f'{pre}/W_{k}'], y), mv(P[f'{pre}/U_{k}'], h), P[f'{pre}/b_{k}'])
    i, f, o, c = sig(g('i')), sig(g('f')), sig(g('o')), vtanh(g('g'))
    m2 = vadd(vmul(f, m), vmul(i, c))
    return vmul(o, vtanh(m2)), m2


def attend(P, pre, q, V):
    e = [sum(a * b for a, b in zip(P[f'{pre}/w'], vtanh(vadd(mv(P[f'{pre}/W_a'], q), mv(P[f'{pre}/U_a'], v), P[f'{pre}/b_a']))))
         for v in V]
    return e


def weighted(alpha, rows):
    return [sum(a * r[k] for a, r in zip(alpha, rows)) for k in range(len(rows[0]))]


def hlstmat():
    H = 2
    lstm_shapes = lambda pre, inp: [(f'{pre}/{k}_{g}', (H, inp) if k == 'W' else (H, H)) for k in 'WU' for g in 'ifog'] + \
        [(f'{pre}/b_{g}', (H,)) for g in 'ifog']
    shapes = [('embed/E', (2, 2))] + lstm_shapes('bottom', 2) + lstm_shapes('top', 2) + [
        ('attention/W_a', (2, 2)), ('attention/U_a', (2, 2)), ('attention/b_a', (2,)), ('attention/w', (2,)),
        ('gate/W_s', (1, 2)), ('init_h/W', (2, 2)), ('init_m/W', (2, 2)), ('out_hidden/W', (2, 4)),
        ('out_hidden/b', (2,)), ('out_vocab/W', (2, 2)), ('out_vocab/b', (2,))]
    P = Params(shapes)
    V = frames(2, 2)
    vbar = [(V[0][k] + V[1][k]) / 2 for k in range(2)]
    h, m = mv(P['init_h/W'], vbar), mv(P['init_m/W'], vbar)
    hb, mb = [mpf(0)] * 2, [mpf(0)] * 2
    out = []
    for tok in (1, 0):
        w = P['embed/E'][tok]
        h, m = lstm(P, 'bottom', w, h, m)
        hb, mb = lstm(P, 'top', h, hb, mb)
        alpha = softmax(attend(P, 'attention', h, V))
        c = weighted(alpha, V)
        beta = sig(mv(P['gate/W_s'], h))[0]
        cbar = [beta * ci + (1 - beta) * hi for ci, hi in zip(c, hb)]
        z = vtanh(vadd(mv(P['out_hidden/W'], h + cbar), P['out_hidden/b']))
        out.append(softmax(vadd(mv(P['out_vocab/W'], z), P['out_vocab/b'])))
    return out


def da():
    H = 2
    lstm_shapes = lambda pre, inp: [(f'{pre}/{k}_{g}', (H, inp) if k == 'W' else (H, H)) for k in 'WU' for g in 'ifog'] + \
        [(f'{pre}/b_{g}', (H,)) for g in 'ifog']
    att = lambda pre: [(f'{pre}/W_a', (2, 2)), (f'{pre}/U_a', (2, 2)), (f'{pre}/b_a', (2,)), (f'{pre}/w', (2,))]
    shapes = [('embed/E', (3, 2))] + lstm_shapes('lstm1', 6) + [('W_rd/W', (2, 4))] + att('attn1') + \
        lstm_shapes('lstm2', 6) + att('attn2') + [('W_x/W', (2, 6)), ('W_h/W', (2, 2)), ('W_s/W', (2, 2)),
                                                  ('W_h3/W', (2, 2)), ('w_a', (2,)), ('W_sd/W', (2, 6)),
                                                  ('out/W', (3, 2)), ('out/b', (3,))]
    P = Params(shapes)
    V = frames(2, 2)
    vg = [mpf('0.3'), mpf('-0.2')]
    h1 = m1 = h2 = m2 = [mpf(0)] * 2
    out = []
    for tok in (1, 2):
        w = P['embed/E'][tok]
        h1, m1 = lstm(P, 'lstm1', vg + h2 + w, h1, m1)
        sc = mv(P['W_rd/W'], w + h1)
        a1 = softmax(attend(P, 'attn1', sc, V))
        v1 = weighted(a1, V)
        y2 = vg + sc + v1
        h2_prev = h2
        h2, m2 = lstm(P, 'lstm2', y2, h2, m2)
        g = sig(vadd(mv(P['W_x/W'], y2), mv(P['W_h/W'], h2_prev)))
        s = vmul(g, vtanh(m2))
        e2 = attend(P, 'attn2', h2, V)
        es = sum(a * b for a, b in zip(P['w_a'], vtanh(vadd(mv(P['W_s/W'], s), mv(P['W_h3/W'], h2)))))
        a2 = softmax(e2 + [es])
        v2 = weighted(a2, V + [s])
        fused = mv(P['W_sd/W'], sc + h2 + v2)
        out.append(softmax(vadd(mv(P['out/W'], fused), P['out/b'])))
    return out


if __name__ == '__main__':
    for label, dists in (('hlstmat', hlstmat()), ('da', da())):
        for t, p in enumerate(dists):
            print(label, t, ', '.join(mp.nstr(v, 20) for v in p))
