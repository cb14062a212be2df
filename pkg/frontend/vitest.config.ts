import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 20_000,
    hookTimeout: 180_000,
    // the integration file drives one shared live server; keep files serial
    fileParallelism: false,
  },
});
