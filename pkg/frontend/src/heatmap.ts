import type { GrayImage } from "./pgm.js";

/** Compose the uploaded image with its attention mask: the base image in
 * gray, attention as a red tint proportional to the mask value. The mask
 * is nearest-resampled onto the image grid. Returns RGBA bytes ready for
 * putImageData. */
export function overlayHeatmap(image: GrayImage, attention: GrayImage,
                               strength = 0.6): Uint8ClampedArray {
  const { width, height } = image;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let y = 0; y < height; y++) {
    const ay = Math.min(Math.floor((y * attention.height) / height),
                        attention.height - 1);
    for (let x = 0; x < width; x++) {
      const ax = Math.min(Math.floor((x * attention.width) / width),
                          attention.width - 1);
      const base = image.pixels[y * width + x];
      const mask = attention.pixels[ay * attention.width + ax] / 255;
      const i = 4 * (y * width + x);
      out[i] = Math.round(base + (255 - base) * mask * strength);
      out[i + 1] = Math.round(base * (1 - mask * strength));
      out[i + 2] = Math.round(base * (1 - mask * strength));
      out[i + 3] = 255;
    }
  }
  return out;
}
