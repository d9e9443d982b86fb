# Exponential-sum rule for 1/R on R = 1..2N+1 from the Hankel (Hilbert) matrix
# H_ij = 1/(i+j+1): eigenvector of the k-th eigenvalue -> polynomial roots -> nodes.
import mpmath as mp, sys, time
mp.mp.dps = int(sys.argv[3]) if len(sys.argv) > 3 else 60
N = int(sys.argv[1]); k = int(sys.argv[2])
n = N + 1
H = mp.matrix(n, n)
for i in range(n):
    for j in range(n):
        H[i, j] = mp.mpf(1) / (i + j + 1)
t = time.time()
E, Q = mp.eigsy(H)
print("eig", time.time() - t, file=sys.stderr)
order = sorted(range(n), key=lambda i: -E[i])
for i in range(min(k + 3, n)):
    print("sigma", i, mp.nstr(E[order[i]], 5), file=sys.stderr)
u = [Q[i, order[k]] for i in range(n)]
# polynomial sum u_i z^i
coeffs = list(reversed(u))
roots = mp.polyroots(coeffs, maxsteps=2000, extraprec=400)
inside = sorted([r for r in roots if abs(r) < 1], key=lambda r: -abs(r))
print("inside", len(inside), file=sys.stderr)
gam = [mp.re(r) for r in inside]
# least squares weights on all samples R = 1..2N+1
Rs = list(range(1, 2 * N + 2))
A = mp.matrix(len(Rs), len(gam)); b = mp.matrix(len(Rs), 1)
for a, R in enumerate(Rs):
    b[a] = mp.mpf(1) / R
    for c, g in enumerate(gam):
        A[a, c] = g ** (R - 1)
w = mp.qr_solve(A, b)[0]
err = max(abs(sum(w[c] * gam[c] ** (R - 1) for c in range(len(gam))) - mp.mpf(1) / R) for R in Rs)
print("maxerr", mp.nstr(err, 5), file=sys.stderr)
for c, g in enumerate(gam):
    lam = -mp.log(g); om = w[c] / g
    print(mp.nstr(lam, 25), mp.nstr(om, 25))
