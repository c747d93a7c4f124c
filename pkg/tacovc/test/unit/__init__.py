"""Fast tests of single operations on tiny networks and toy data"""
