/** Mask IoU over flat arrays; probabilities binarize at a threshold. */

export function maskIoU(pred: Float32Array, gt: Float32Array, threshold = 0.5): number {
  if (pred.length !== gt.length) {
    throw new Error(`mask sizes differ: ${pred.length} vs ${gt.length}`);
  }
  let inter = 0;
  let union = 0;
  for (let i = 0; i < pred.length; i++) {
    const p = pred[i] > threshold ? 1 : 0;
    const g = gt[i] > threshold ? 1 : 0;
    if (p & g) inter++;
    if (p | g) union++;
  }
  return union > 0 ? inter / union : 1.0;
}

export function meanIoU(pairs: Array<[Float32Array, Float32Array]>, threshold = 0.5): number {
  if (pairs.length === 0) throw new Error('meanIoU of an empty list');
  let sum = 0;
  for (const [pred, gt] of pairs) sum += maskIoU(pred, gt, threshold);
  return sum / pairs.length;
}
