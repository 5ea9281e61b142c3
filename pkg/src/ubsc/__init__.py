"""Executable toolchain for a session-typed calculus of unreliable
broadcast networks: surface syntax, linear session typechecker with
endpoint synchronisation, a seeded lossy reduction engine, and safety
and progress analyses."""

__version__ = "0.1.0"
