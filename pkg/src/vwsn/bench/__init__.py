"""PaaS-role measurement client: creation-delay/start-time experiments and
the smart-home end-to-end scenario."""
