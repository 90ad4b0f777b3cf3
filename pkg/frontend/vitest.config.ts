import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["test/**/*.test.ts"],
    // the integration suite boots the Python service once per file
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
