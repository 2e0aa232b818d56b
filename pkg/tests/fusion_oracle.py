"""Per-pixel scalar evaluation of the superimposition rule, written without numpy."""

import math


def _mirror(i, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i %= period
    return i if i < n else period - i


def smoothed_value(grid, y, x, sigma, size):
    h, w = len(grid), len(grid[0])
    r = size // 2
    num, den = [], []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            wgt = math.exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma))
            den.append(wgt)
            if grid[_mirror(y + dy, h)][_mirror(x + dx, w)]:
                num.append(wgt)
    return math.fsum(num) / math.fsum(den)


def fuse_pixel(i_val, g_val, alpha, beta):
    if i_val >= beta:
        return i_val
    return min(255, max(0, math.floor(i_val + alpha * g_val + 0.5)))


def fuse_oracle(pixels, grid, beta, gamma, sigma, size):
    alpha = max(max(max(row) for row in pixels), gamma)
    return [
        [fuse_pixel(pixels[y][x], smoothed_value(grid, y, x, sigma, size), alpha, beta) for x in range(len(pixels[0]))]
        for y in range(len(pixels))
    ]
