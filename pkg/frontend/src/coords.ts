/** Pixel <-> normalized page coordinates.
 *
 * The wire speaks positions in [0, 1] squared relative to the page image,
 * so both ends agree regardless of window size. The pixel rect here is the
 * rendered image rectangle, not the canvas or viewport.
 */

export interface Rect {
  left: number;
  top: number;
  width: number;
  height: number;
}

export interface Norm {
  x: number;
  y: number;
}

/** Null when the pointer is outside the image: such positions are not published. */
export function pixelToNorm(px: number, py: number, rect: Rect): Norm | null {
  if (rect.width <= 0 || rect.height <= 0) return null;
  const x = (px - rect.left) / rect.width;
  const y = (py - rect.top) / rect.height;
  if (x < 0 || x > 1 || y < 0 || y > 1) return null;
  return { x, y };
}

export function normToPixel(n: Norm, rect: Rect): { x: number; y: number } {
  return {
    x: rect.left + n.x * rect.width,
    y: rect.top + n.y * rect.height,
  };
}
